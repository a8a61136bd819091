//! Run directory layout and the manifest recording what produced each file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_file, RunConfig};

pub const SNAPSHOT: &str = "snapshot.json";
pub const STATS: &str = "stats.json";
pub const SPLIT: &str = "split.json";
pub const MODEL: &str = "model.json";
pub const BPRMF: &str = "bprmf.json";
pub const CANDIDATES: &str = "candidates.tsv";
pub const CORPUS: &str = "corpus.jsonl";
pub const PROFILES: &str = "profiles.jsonl";
pub const RANKED: &str = "ranked.jsonl";
pub const TRACES: &str = "traces.jsonl";
pub const TRANSCRIPT: &str = "transcript.jsonl";
pub const METRICS: &str = "metrics.json";
pub const METRICS_USERS: &str = "metrics_users.jsonl";
pub const METRICS_RETRIEVAL: &str = "metrics_retrieval.json";
pub const METRICS_RETRIEVAL_USERS: &str = "metrics_retrieval_users.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Extra command-line inputs that are not part of the config.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, String>,
    /// Output file name → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating run directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fails with a hint naming the stage that writes `name`.
    pub fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            bail!(
                "missing {} in {}; run `palr {stage}` first",
                name,
                self.root.display()
            );
        }
        Ok(p)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.path(MANIFEST);
        if !p.exists() {
            return Ok(Manifest { tool: tool(), ..Manifest::default() });
        }
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    /// Records a finished stage; hashes every output file.
    pub fn record(&self, stage: &str, config: &RunConfig, args: BTreeMap<String, String>, outputs: &[&str]) -> Result<()> {
        let mut m = self.manifest()?;
        m.tool = tool();
        let mut hashes = BTreeMap::new();
        for name in outputs {
            hashes.insert((*name).to_owned(), sha256_file(&self.path(name))?);
        }
        m.stages.insert(
            stage.to_owned(),
            StageRecord {
                config_hash: config.hash(),
                config: serde_json::to_value(config)?,
                args,
                outputs: hashes,
            },
        );
        palr_core::snapshot::write_json_pretty(&self.path(MANIFEST), &m)?;
        palr_core::snapshot::write_json_pretty(&self.path(CONFIG), config)?;
        Ok(())
    }
}

fn tool() -> String {
    format!("palr {}", env!("CARGO_PKG_VERSION"))
}
