//! One function per subcommand. Each reads its inputs from the run
//! directory, writes its outputs there and records itself in the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use palr_core::catalog::{parse_amazon, parse_movielens, ParseReport};
use palr_core::instructgen::{build_corpus, write_corpus, AffinityGraph};
use palr_core::llm_client::{EchoCandidates, HttpClient, Scripted, Transcribed};
use palr_core::metrics::{evaluate_lists, evaluate_retrieval, UserOutcome};
use palr_core::profiler::{build_profile_prompt, generate_profile, UserProfile};
use palr_core::ranker::{rank_all, RankTrace};
use palr_core::retrieval::{
    import_candidates, train_bprmf, train_cooc, BprMfModel, Popularity, RetrievalModel, TrainSet,
};
use palr_core::snapshot::{read_json, read_jsonl_file, write_json_pretty, write_jsonl_file, IngestReport, Snapshot};
use palr_core::splitter::{leave_one_out, sample_users, SplitManifest, UserSample};
use palr_core::synthetic::generate;
use palr_core::{
    CompletionClient, DatasetKind, EvalSplit, ItemIndex, MetricsReport, RankedList, Renderer, UserId,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{LlmMode, ModelKind, RunConfig};
use crate::run::*;

pub struct Ctx {
    pub cfg: RunConfig,
    pub run: RunDir,
    /// Extra arguments worth recording in the manifest.
    pub args: BTreeMap<String, String>,
}

impl Ctx {
    fn record(&self, stage: &str, outputs: &[&str]) -> Result<()> {
        self.run.record(stage, &self.cfg, self.args.clone(), outputs)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

// ------------------------------------------------------------------ ingest

#[derive(Serialize)]
struct StatsFile<'a> {
    dataset: DatasetKind,
    parse: &'a ParseReport,
    preprocessing: &'a IngestReport,
}

pub fn ingest(ctx: &Ctx) -> Result<()> {
    let d = &ctx.cfg.dataset;
    let in_dir = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        explicit.clone().or_else(|| d.dir.as_ref().map(|dir| dir.join(name)))
    };
    let (log, catalog, parse) = match d.kind {
        DatasetKind::MovieLens => {
            let (Some(ratings), Some(movies)) = (in_dir(&d.ratings, "ratings.dat"), in_dir(&d.movies, "movies.dat"))
            else {
                bail!("MovieLens needs --data-dir (with ratings.dat and movies.dat) or --ratings and --movies");
            };
            parse_movielens(open(&ratings)?, open(&movies)?)?
        }
        DatasetKind::Amazon => {
            let Some(reviews) = &d.reviews else {
                bail!("Amazon needs --reviews (and optionally --meta)");
            };
            let meta: Box<dyn Read> = match &d.meta {
                Some(p) => Box::new(open(p)?),
                None => Box::new(std::io::empty()),
            };
            parse_amazon(open(reviews)?, meta)?
        }
    };
    for m in parse.malformed.iter().take(5) {
        log::warn!("skipped malformed line: {m:?}");
    }
    if parse.placeholder_items > 0 {
        log::warn!("{} interacted items have no metadata; titled by id", parse.placeholder_items);
    }
    let (snapshot, report) = Snapshot::preprocess(d.kind, &log, &catalog, d.core_k);
    snapshot.save(&ctx.run.path(SNAPSHOT))?;
    write_json_pretty(
        &ctx.run.path(STATS),
        &StatsFile { dataset: d.kind, parse: &parse, preprocessing: &report },
    )?;
    ctx.record("ingest", &[SNAPSHOT, STATS])?;
    let s = snapshot.stats();
    println!("{} users / {} items / {} interactions", s.users, s.items, s.interactions);
    println!(
        "raw {} -> deduplicated {} -> {}-core {} ({} passes)",
        report.raw.interactions, report.deduplicated.interactions, d.core_k, s.interactions, report.core.passes
    );
    println!("snapshot sha256 {}", crate::config::sha256_file(&ctx.run.path(SNAPSHOT))?);
    Ok(())
}

fn load_snapshot(run: &RunDir) -> Result<Snapshot> {
    Ok(Snapshot::load(&run.require(SNAPSHOT, "ingest")?)?)
}

// ------------------------------------------------------------------- split

pub fn split(ctx: &Ctx) -> Result<()> {
    let snapshot = load_snapshot(&ctx.run)?;
    let split = leave_one_out(&snapshot.sequences());
    let users: Vec<UserId> = split.users.keys().cloned().collect();
    let sample = sample_users(&users, ctx.cfg.split.fraction, ctx.cfg.split.seed)?;
    SplitManifest::new(&split, sample.clone()).save(&ctx.run.path(SPLIT))?;
    ctx.record("split", &[SPLIT])?;
    println!(
        "{} users split ({} rejected); {} sampled for instructions (fraction {}, seed {})",
        split.users.len(),
        split.rejected.len(),
        sample.selected.len(),
        sample.fraction,
        sample.seed
    );
    Ok(())
}

fn load_split(run: &RunDir) -> Result<SplitManifest> {
    Ok(SplitManifest::load(&run.require(SPLIT, "split")?)?)
}

/// The manifest's sample, or a fresh one if the config asks for another.
fn current_sample(cfg: &RunConfig, m: &SplitManifest, split: &EvalSplit) -> Result<UserSample> {
    if m.sample.fraction == cfg.split.fraction && m.sample.seed == cfg.split.seed {
        return Ok(m.sample.clone());
    }
    let users: Vec<UserId> = split.users.keys().cloned().collect();
    Ok(sample_users(&users, cfg.split.fraction, cfg.split.seed)?)
}

// ------------------------------------------------------------------- train

#[derive(Serialize, Deserialize)]
struct ModelDescriptor {
    kind: ModelKind,
    /// Parameter or candidate file next to the descriptor, if any.
    file: Option<String>,
    items: usize,
}

fn universe(snapshot: &Snapshot) -> ItemIndex {
    ItemIndex::new(snapshot.catalog.iter().map(|i| &i.id))
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let snapshot = load_snapshot(&ctx.run)?;
    let split = load_split(&ctx.run)?.split();
    let universe = universe(&snapshot);
    let kind = ctx.cfg.retrieval.model;
    let mut outputs = vec![MODEL];
    let file = match kind {
        ModelKind::Bprmf => {
            let train = TrainSet::from_split(&split, universe.clone());
            let start = std::time::Instant::now();
            let model = train_bprmf(&train, &ctx.cfg.retrieval.bprmf)?;
            model.save(&ctx.run.path(BPRMF))?;
            println!(
                "BPR-MF trained on {} interactions ({} epochs, dim {}) in {:.1}s",
                train.interactions(),
                model.hp.epochs,
                model.hp.dim,
                start.elapsed().as_secs_f64()
            );
            outputs.push(BPRMF);
            Some(BPRMF.to_owned())
        }
        ModelKind::Imported => {
            let Some(src) = &ctx.cfg.retrieval.candidates else {
                bail!("the imported model needs --candidates <file>");
            };
            let (imported, report) = import_candidates(open(src)?, &universe)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            std::fs::copy(src, ctx.run.path(CANDIDATES))
                .with_context(|| format!("copying {}", src.display()))?;
            println!("imported candidate lists for {} users", imported.rows().len());
            outputs.push(CANDIDATES);
            Some(CANDIDATES.to_owned())
        }
        ModelKind::Cooc | ModelKind::Popularity => {
            println!("{kind:?} model is rebuilt from the split on load; nothing to train");
            None
        }
    };
    write_json_pretty(&ctx.run.path(MODEL), &ModelDescriptor { kind, file, items: universe.len() })?;
    ctx.record("train", &outputs)?;
    Ok(())
}

fn load_model(ctx: &Ctx, snapshot: &Snapshot, split: &EvalSplit) -> Result<RetrievalModel> {
    let desc: ModelDescriptor = read_json(&ctx.run.require(MODEL, "train")?)?;
    if desc.kind != ctx.cfg.retrieval.model {
        log::warn!(
            "config asks for {:?} but the run directory holds a {:?} model; using {:?}",
            ctx.cfg.retrieval.model,
            desc.kind,
            desc.kind
        );
    }
    let universe = universe(snapshot);
    let file = || -> Result<PathBuf> {
        let name = desc.file.as_deref().ok_or_else(|| anyhow!("model.json names no parameter file"))?;
        ctx.run.require(name, "train")
    };
    Ok(match desc.kind {
        ModelKind::Bprmf => RetrievalModel::BprMf(BprMfModel::load(&file()?)?),
        ModelKind::Imported => RetrievalModel::Imported(import_candidates(open(&file()?)?, &universe)?.0),
        ModelKind::Cooc => RetrievalModel::Cooc(train_cooc(&TrainSet::from_split(split, universe))),
        ModelKind::Popularity => RetrievalModel::Popularity(Popularity::train(&TrainSet::from_split(split, universe))),
    })
}

// -------------------------------------------------------- gen-instructions

pub fn gen_instructions(ctx: &Ctx) -> Result<()> {
    let snapshot = load_snapshot(&ctx.run)?;
    let m = load_split(&ctx.run)?;
    let split = m.split();
    let sample = current_sample(&ctx.cfg, &m, &split)?;
    let renderer = Renderer::new(&snapshot.catalog, snapshot.dataset);
    let cooc = train_cooc(&TrainSet::from_split(&split, universe(&snapshot)));
    let graph = AffinityGraph::from_split(&split);
    let corpus = build_corpus(&split, &sample, &renderer, &cooc, &graph, &ctx.cfg.instructions);
    for (user, err) in &corpus.errors {
        log::warn!("user {user}: {err}");
    }
    let mut w = BufWriter::new(File::create(ctx.run.path(CORPUS))?);
    write_corpus(&mut w, &corpus.examples)?;
    w.flush()?;
    drop(w);
    ctx.record("gen-instructions", &[CORPUS])?;
    println!(
        "{} examples for {} sampled users ({} skipped) -> {}",
        corpus.examples.len(),
        sample.selected.len(),
        corpus.errors.len(),
        ctx.run.path(CORPUS).display()
    );
    Ok(())
}

// -------------------------------------------------------------------- LLM

fn client(ctx: &Ctx) -> Result<Box<dyn CompletionClient>> {
    let llm = &ctx.cfg.llm;
    let inner: Box<dyn CompletionClient> = match llm.mode {
        LlmMode::MockEcho => Box::new(EchoCandidates { n: ctx.cfg.rank.k, quote: '"' }),
        LlmMode::MockScripted => {
            let path = llm.script.as_ref().ok_or_else(|| anyhow!("mock-scripted needs a script file"))?;
            let script: Scripted = read_json(path)?;
            Box::new(script)
        }
        LlmMode::Http => Box::new(HttpClient::new(llm.endpoint.clone().with_env())?),
    };
    if llm.transcript {
        let sink = BufWriter::new(File::create(ctx.run.path(TRANSCRIPT))?);
        return Ok(Box::new(Transcribed::new(inner, sink)));
    }
    Ok(inner)
}

// ----------------------------------------------------------------- profile

pub fn profile(ctx: &Ctx) -> Result<()> {
    let snapshot = load_snapshot(&ctx.run)?;
    let split = load_split(&ctx.run)?.split();
    let renderer = Renderer::new(&snapshot.catalog, snapshot.dataset);
    let client = client(ctx)?;
    let results: Vec<_> = split
        .users
        .par_iter()
        .map(|(u, s)| {
            build_profile_prompt(u, &s.history(), &renderer, ctx.cfg.rank.profile_items)
                .and_then(|p| generate_profile(u, p, &*client, &ctx.cfg.rank.params))
        })
        .collect();
    drop(client);
    let mut profiles = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => profiles.push(p),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if profiles.is_empty() && !failures.is_empty() {
        bail!("no profile could be generated; first error: {}", failures[0]);
    }
    for f in failures.iter().take(5) {
        log::warn!("{f}");
    }
    write_jsonl_file(&ctx.run.path(PROFILES), &profiles)?;
    ctx.record("profile", &[PROFILES])?;
    println!("{} profiles written, {} failed", profiles.len(), failures.len());
    Ok(())
}

// -------------------------------------------------------------------- rank

pub fn rank(ctx: &Ctx) -> Result<()> {
    let snapshot = load_snapshot(&ctx.run)?;
    let split = load_split(&ctx.run)?.split();
    let model = load_model(ctx, &snapshot, &split)?;
    let renderer = Renderer::new(&snapshot.catalog, snapshot.dataset);
    let mut profiles = BTreeMap::new();
    if ctx.cfg.rank.use_profile && ctx.run.path(PROFILES).is_file() {
        let loaded: Vec<UserProfile> = read_jsonl_file(&ctx.run.path(PROFILES))?;
        profiles = loaded.into_iter().map(|p| (p.user.clone(), p)).collect();
    }
    let client = client(ctx)?;
    let results = rank_all(&split, None, &model, &*client, &ctx.cfg.rank, &renderer, &profiles);
    drop(client);

    let lists: Vec<&RankedList> = results.values().map(|(l, _)| l).collect();
    let traces: Vec<&RankTrace> = results.values().map(|(_, t)| t).collect();
    let failed: Vec<&RankTrace> = traces.iter().copied().filter(|t| t.failed).collect();
    if !results.is_empty() && failed.len() == results.len() {
        bail!(
            "every completion failed; first error: {}",
            failed[0].errors.first().map_or("unknown", String::as_str)
        );
    }
    write_jsonl_file(&ctx.run.path(RANKED), &lists)?;
    write_jsonl_file(&ctx.run.path(TRACES), &traces)?;
    let mut outputs = vec![RANKED, TRACES];
    if ctx.cfg.llm.transcript {
        outputs.push(TRANSCRIPT);
    }
    ctx.record("rank", &outputs)?;
    let filled: usize = lists.iter().map(|l| l.fill_count).sum();
    let dropped: usize = lists.iter().map(|l| l.dropped.len()).sum();
    println!(
        "ranked {} users: {} fell back to retrieval order, {} completion strings dropped, {} slots backfilled",
        lists.len(),
        failed.len(),
        dropped,
        filled
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Serialize, Deserialize)]
pub struct MetricsFile {
    pub retrieval_only: bool,
    pub reports: Vec<MetricsReport>,
}

pub fn eval(ctx: &Ctx, retrieval_only: bool) -> Result<()> {
    if !retrieval_only {
        ctx.run.require(RANKED, "rank")?;
    }
    let m = load_split(&ctx.run)?;
    let split = m.split();
    let (outcomes, out_name, users_name) = if retrieval_only {
        let snapshot = load_snapshot(&ctx.run)?;
        let model = load_model(ctx, &snapshot, &split)?;
        let o = evaluate_retrieval(&model, &split, None, ctx.cfg.eval.exclusion, Some(ctx.cfg.rank.pool_size));
        (o, METRICS_RETRIEVAL, METRICS_RETRIEVAL_USERS)
    } else {
        let lists: Vec<RankedList> = read_jsonl_file(&ctx.run.require(RANKED, "rank")?)?;
        let lists: BTreeMap<UserId, RankedList> = lists.into_iter().map(|l| (l.user.clone(), l)).collect();
        (evaluate_lists(&lists, &split, None), METRICS, METRICS_USERS)
    };
    let sample = current_sample(&ctx.cfg, &m, &split)?;
    let reports = slice_reports(ctx, &outcomes, &sample.selected, split.rejected.len());
    let file = MetricsFile { retrieval_only, reports };
    write_json_pretty(&ctx.run.path(out_name), &file)?;
    let mut sorted: Vec<&UserOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.user.cmp(&b.user));
    write_jsonl_file(&ctx.run.path(users_name), &sorted)?;
    ctx.record(if retrieval_only { "eval-retrieval" } else { "eval" }, &[out_name, users_name])?;
    for r in &file.reports {
        println!("{r}");
    }
    Ok(())
}

/// All users, then the instruction-sample users and the rest.
fn slice_reports(ctx: &Ctx, outcomes: &[UserOutcome], sampled: &BTreeSet<UserId>, skipped: usize) -> Vec<MetricsReport> {
    let ks = &ctx.cfg.eval.ks;
    let manifest = json!({
        "config_hash": ctx.cfg.hash(),
        "split_seed": ctx.cfg.split.seed,
        "instruction_seed": ctx.cfg.instructions.seed,
        "bprmf_seed": ctx.cfg.retrieval.bprmf.seed,
        "model": ctx.cfg.retrieval.model,
        "llm": ctx.cfg.llm.mode,
    });
    let (inside, outside): (Vec<UserOutcome>, Vec<UserOutcome>) =
        outcomes.iter().cloned().partition(|o| sampled.contains(&o.user));
    let mut reports = vec![MetricsReport::from_outcomes("all", outcomes, ks)];
    for (name, part) in [("sampled", inside), ("unsampled", outside)] {
        if !part.is_empty() && part.len() != outcomes.len() {
            reports.push(MetricsReport::from_outcomes(name, &part, ks));
        }
    }
    for r in &mut reports {
        r.skipped_users = skipped;
        r.manifest = Some(manifest.clone());
    }
    reports
}

// ---------------------------------------------------------------- pipeline

pub fn pipeline(ctx: &Ctx) -> Result<()> {
    ingest(ctx)?;
    split(ctx)?;
    train(ctx)?;
    gen_instructions(ctx)?;
    if ctx.cfg.rank.use_profile {
        profile(ctx)?;
    }
    rank(ctx)?;
    eval(ctx, false)
}

// ------------------------------------------------------------------- synth

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let data = generate(&cfg.synthetic);
    let (ratings, movies) = data.to_movielens();
    std::fs::write(out.join("ratings.dat"), ratings)?;
    std::fs::write(out.join("movies.dat"), movies)?;
    println!(
        "wrote {} interactions for {} users over {} items to {}",
        data.log.len(),
        cfg.synthetic.users,
        cfg.synthetic.items,
        out.display()
    );
    Ok(())
}
