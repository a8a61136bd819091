use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Args, Parser, Subcommand};
use palr_core::DatasetKind;

mod config;
mod run;
mod stages;

use config::{ModelKind, RunConfig};
use run::RunDir;
use stages::Ctx;

/// Candidate retrieval, instruction corpora, LLM reranking and evaluation
/// for sequential recommendation.
#[derive(Parser)]
#[command(name = "palr", version)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse the raw dumps, deduplicate, k-core filter; print dataset statistics.
    Ingest,
    /// Leave-one-out split plus the instruction-corpus user sample.
    Split,
    /// Train (or import) the candidate retrieval model.
    Train,
    /// Write the instruction-tuning corpus for the sampled users.
    GenInstructions,
    /// Ask the LLM for keyword profiles of every user.
    Profile,
    /// Retrieve candidates and rerank them with the LLM.
    Rank,
    /// HR@K / NDCG@K of the reranked lists (or of retrieval alone).
    Eval {
        /// Evaluate the retrieval model's full ranking instead of reranked lists.
        #[arg(long)]
        retrieval_only: bool,
    },
    /// ingest, split, train, gen-instructions, [profile], rank, eval.
    Pipeline,
    /// Write a synthetic dataset in MovieLens format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
    },
    /// Print the effective configuration and its hash.
    ShowConfig,
}

#[derive(Args)]
struct Opts {
    /// JSON run configuration (defaults to <run-dir>/config.json if present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[arg(long, global = true)]
    dataset: Option<DatasetKind>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    ratings: Option<PathBuf>,
    #[arg(long, global = true)]
    movies: Option<PathBuf>,
    #[arg(long, global = true)]
    reviews: Option<PathBuf>,
    #[arg(long, global = true)]
    meta: Option<PathBuf>,

    /// Fraction of users sampled for the instruction corpus.
    #[arg(long, global = true)]
    fraction: Option<f64>,
    /// Seed of the user sample.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// `user<TAB>item,item,...` candidate file for `--model imported`.
    #[arg(long, global = true)]
    candidates: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// mock-echo | mock-scripted:<path> | http
    #[arg(long, global = true)]
    llm: Option<String>,
    /// Include the LLM user profile in ranking prompts.
    #[arg(long, global = true)]
    with_profile: bool,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    pool: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

impl Opts {
    fn config(&self) -> Result<RunConfig> {
        let saved = self.run_dir.join(run::CONFIG);
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None if saved.is_file() => RunConfig::load(&saved)?,
            None => RunConfig::default(),
        };
        let d = &mut cfg.dataset;
        if let Some(k) = self.dataset {
            d.kind = k;
        }
        if let Some(p) = &self.data_dir {
            d.dir = Some(p.clone());
        }
        for (src, dst) in [
            (&self.ratings, &mut d.ratings),
            (&self.movies, &mut d.movies),
            (&self.reviews, &mut d.reviews),
            (&self.meta, &mut d.meta),
        ] {
            if let Some(p) = src {
                *dst = Some(p.clone());
            }
        }
        if let Some(f) = self.fraction {
            cfg.split.fraction = f;
        }
        if let Some(s) = self.seed {
            cfg.split.seed = s;
        }
        if let Some(m) = self.model {
            cfg.retrieval.model = m;
        }
        if let Some(p) = &self.candidates {
            cfg.retrieval.candidates = Some(p.clone());
        }
        if let Some(e) = self.epochs {
            cfg.retrieval.bprmf.epochs = e;
        }
        if let Some(flag) = &self.llm {
            cfg.llm.apply_flag(flag)?;
        }
        if self.with_profile {
            cfg.rank.use_profile = true;
        }
        if let Some(k) = self.k {
            cfg.rank.k = k;
        }
        if let Some(p) = self.pool {
            cfg.rank.pool_size = p;
        }
        if let Some(ks) = &self.ks {
            cfg.eval.ks = ks.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = cli.opts.config()?;
    if let Some(j) = cli.opts.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    match cli.cmd {
        Cmd::Synth { out, users, items } => {
            if let Some(u) = users {
                cfg.synthetic.users = u;
            }
            if let Some(i) = items {
                cfg.synthetic.items = i;
            }
            return stages::synth(&cfg, &out);
        }
        Cmd::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            println!("hash {}", cfg.hash());
            return Ok(());
        }
        _ => {}
    }
    let mut args = BTreeMap::new();
    if let Some(j) = cli.opts.jobs {
        args.insert("jobs".to_owned(), j.to_string());
    }
    let ctx = Ctx { cfg, run: RunDir::create(&cli.opts.run_dir)?, args };
    match cli.cmd {
        Cmd::Ingest => stages::ingest(&ctx),
        Cmd::Split => stages::split(&ctx),
        Cmd::Train => stages::train(&ctx),
        Cmd::GenInstructions => stages::gen_instructions(&ctx),
        Cmd::Profile => stages::profile(&ctx),
        Cmd::Rank => stages::rank(&ctx),
        Cmd::Eval { retrieval_only } => stages::eval(&ctx, retrieval_only),
        Cmd::Pipeline => stages::pipeline(&ctx),
        Cmd::Synth { .. } | Cmd::ShowConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
