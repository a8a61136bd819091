//! Versioned on-disk snapshot of a preprocessed dataset, plus small JSON /
//! JSON-lines helpers shared by the other file formats.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    build_sequences, dedupe, k_core, CoreReport, DatasetKind, DatasetStats, Interaction,
    InteractionLog, ItemCatalog, ItemId, UserId, UserSequence,
};

pub const SNAPSHOT_FORMAT: &str = "palr-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: expected format `{expected}` v{version}, found `{found}` v{found_version}")]
    Format { path: String, expected: &'static str, version: u32, found: String, found_version: u32 },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl FileError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json { path: path.display().to_string(), source }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let f = File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, value).map_err(|e| FileError::json(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| FileError::io(path, e))
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FileError::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FileError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let f = File::open(path).map_err(|e| FileError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| FileError::json(path, e))
}

/// Serializes each record as one line. Output bytes depend only on the records.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    w: &mut impl Write,
    records: impl IntoIterator<Item = &'a T>,
) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_jsonl_file<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), FileError> {
    let f = File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_jsonl(&mut w, records)
        .and_then(|_| w.flush())
        .map_err(|e| FileError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(reader: impl Read) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FileError> {
    let f = File::open(path).map_err(|e| FileError::io(path, e))?;
    read_jsonl(f).map_err(|e| FileError::io(path, e))
}

/// Checks a `{format, version}` header read from `path`.
pub fn check_header(
    path: &Path,
    expected: &'static str,
    version: u32,
    found: &str,
    found_version: u32,
) -> Result<(), FileError> {
    if found != expected || found_version != version {
        return Err(FileError::Format {
            path: path.display().to_string(),
            expected,
            version,
            found: found.to_owned(),
            found_version,
        });
    }
    Ok(())
}

/// A preprocessed dataset: deduplicated, k-core filtered interactions in
/// input order, and the catalog restricted to the surviving items.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dataset: DatasetKind,
    pub catalog: ItemCatalog,
    pub log: InteractionLog,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    format: String,
    version: u32,
    dataset: DatasetKind,
    counts: DatasetStats,
    items: ItemCatalog,
    /// `[user, item, timestamp]`
    interactions: Vec<(UserId, ItemId, i64)>,
}

/// Preprocessing summary for the stats report.
#[derive(Clone, Debug, Serialize)]
pub struct IngestReport {
    pub raw: DatasetStats,
    pub deduplicated: DatasetStats,
    pub core: CoreReport,
    pub filtered: DatasetStats,
}

impl Snapshot {
    /// Dedupe, then k-core filter, then drop catalog entries nobody touches.
    pub fn preprocess(
        dataset: DatasetKind,
        raw: &InteractionLog,
        catalog: &ItemCatalog,
        core_k: usize,
    ) -> (Self, IngestReport) {
        let deduped = dedupe(raw);
        let (log, core) = k_core(&deduped, core_k);
        let catalog = catalog.restricted_to(log.item_counts().keys());
        let report = IngestReport {
            raw: raw.stats(),
            deduplicated: deduped.stats(),
            core,
            filtered: log.stats(),
        };
        (Self { dataset, catalog, log }, report)
    }

    pub fn stats(&self) -> DatasetStats {
        self.log.stats()
    }

    pub fn sequences(&self) -> BTreeMap<UserId, UserSequence> {
        build_sequences(&self.log)
    }

    pub fn write_to(&self, w: impl Write) -> serde_json::Result<()> {
        let file = SnapshotFile {
            format: SNAPSHOT_FORMAT.to_owned(),
            version: SNAPSHOT_VERSION,
            dataset: self.dataset,
            counts: self.stats(),
            items: self.catalog.clone(),
            interactions: self
                .log
                .interactions()
                .iter()
                .map(|x| (x.user.clone(), x.item.clone(), x.timestamp))
                .collect(),
        };
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &file)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)?;
        w.flush().map_err(serde_json::Error::io)
    }

    pub fn save(&self, path: &Path) -> Result<(), FileError> {
        let f = File::create(path).map_err(|e| FileError::io(path, e))?;
        self.write_to(f).map_err(|e| FileError::json(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let file: SnapshotFile = read_json(path)?;
        check_header(path, SNAPSHOT_FORMAT, SNAPSHOT_VERSION, &file.format, file.version)?;
        let log = InteractionLog::new(
            file.interactions
                .into_iter()
                .map(|(u, i, t)| Interaction::new(u, i, t))
                .collect(),
        );
        let invalid = |message: String| FileError::Invalid { path: path.display().to_string(), message };
        if log.stats() != file.counts {
            return Err(invalid(format!(
                "header counts ({}) disagree with contents ({})",
                file.counts,
                log.stats()
            )));
        }
        if let Some(missing) = log.item_counts().keys().find(|id| !file.items.contains(id)) {
            return Err(invalid(format!("item `{missing}` has interactions but no catalog entry")));
        }
        Ok(Self { dataset: file.dataset, catalog: file.items, log })
    }
}
