//! Run configuration: one JSON document holding every knob and seed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use palr_core::instructgen::CorpusConfig;
use palr_core::llm_client::LlmEndpointConfig;
use palr_core::metrics::ExclusionPolicy;
use palr_core::ranker::RankConfig;
use palr_core::retrieval::BprHyper;
use palr_core::synthetic::SyntheticConfig;
use palr_core::DatasetKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory with `ratings.dat` and `movies.dat` (MovieLens).
    pub dir: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub movies: Option<PathBuf>,
    /// Amazon review dump (JSON lines or CSV, optionally gzipped).
    pub reviews: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub core_k: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { kind: DatasetKind::MovieLens, dir: None, ratings: None, movies: None, reviews: None, meta: None, core_k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of users sampled for the instruction corpus.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fraction: 0.2, seed: 7 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Bprmf,
    Cooc,
    Popularity,
    Imported,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub model: ModelKind,
    pub bprmf: BprHyper,
    /// `user<TAB>item,item,...` file for the imported model.
    pub candidates: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmMode {
    #[default]
    MockEcho,
    MockScripted,
    Http,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub mode: LlmMode,
    /// JSON object user id -> completion, for `mock-scripted`.
    pub script: Option<PathBuf>,
    pub endpoint: LlmEndpointConfig,
    /// Log every exchange to `transcript.jsonl` in the run directory.
    pub transcript: bool,
}

impl LlmConfig {
    /// `mock-echo`, `mock-scripted:<path>` or `http`.
    pub fn apply_flag(&mut self, flag: &str) -> Result<()> {
        match flag.split_once(':') {
            None if flag == "mock-echo" => self.mode = LlmMode::MockEcho,
            None if flag == "http" => self.mode = LlmMode::Http,
            Some(("mock-scripted", path)) if !path.is_empty() => {
                self.mode = LlmMode::MockScripted;
                self.script = Some(PathBuf::from(path));
            }
            _ => bail!("--llm must be mock-echo, mock-scripted:<path> or http (got `{flag}`)"),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub exclusion: ExclusionPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10], exclusion: ExclusionPolicy::SeenExcluded }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub retrieval: RetrievalConfig,
    pub instructions: CorpusConfig,
    pub llm: LlmConfig,
    pub rank: RankConfig,
    pub eval: EvalConfig,
    pub synthetic: SyntheticConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Compact JSON with object keys sorted.
    pub fn canonical(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be non-empty and every K >= 1");
        }
        if self.rank.k == 0 || self.rank.pool_size == 0 {
            bail!("rank.k and rank.pool_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.split.fraction) {
            bail!("split.fraction must be within [0, 1]");
        }
        if self.dataset.core_k == 0 {
            bail!("dataset.core_k must be >= 1");
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
