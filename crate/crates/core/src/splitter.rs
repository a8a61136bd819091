//! Leave-one-out splits and the seeded fine-tuning user sample.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ItemId, UserId, UserSequence};
use crate::rng;
use crate::snapshot::{check_header, read_json, write_json, FileError};

pub const SPLIT_FORMAT: &str = "palr-split";
pub const SPLIT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train: Vec<ItemId>,
    pub validation: ItemId,
    pub test: ItemId,
}

impl UserSplit {
    /// Everything the user did before the test item: train prefix then validation.
    pub fn history(&self) -> Vec<ItemId> {
        let mut h = self.train.clone();
        h.push(self.validation.clone());
        h
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SplitError {
    #[error("sequence of length {0} cannot hold train, validation and test items")]
    TooShort(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub users: BTreeMap<UserId, UserSplit>,
    pub rejected: BTreeMap<UserId, SplitError>,
}

/// Last item → test, second-to-last → validation, the rest → train.
pub fn leave_one_out(sequences: &BTreeMap<UserId, UserSequence>) -> EvalSplit {
    let mut split = EvalSplit::default();
    for (user, seq) in sequences {
        let n = seq.items.len();
        if n < 3 {
            split.rejected.insert(user.clone(), SplitError::TooShort(n));
            continue;
        }
        split.users.insert(
            user.clone(),
            UserSplit {
                train: seq.items[..n - 2].to_vec(),
                validation: seq.items[n - 2].clone(),
                test: seq.items[n - 1].clone(),
            },
        );
    }
    if !split.rejected.is_empty() {
        log::warn!("leave-one-out rejected {} user(s) with fewer than 3 items", split.rejected.len());
    }
    split
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSample {
    pub selected: BTreeSet<UserId>,
    pub seed: u64,
    pub fraction: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("sample fraction must be in (0, 1], got {0}")]
    FractionOutOfRange(f64),
}

/// Seeded subset of `round(fraction * n)` distinct users. The input is sorted
/// and deduplicated first, so only its contents matter, not its order.
pub fn sample_users(users: &[UserId], fraction: f64, seed: u64) -> Result<UserSample, SampleError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SampleError::FractionOutOfRange(fraction));
    }
    let mut pool: Vec<&UserId> = users.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let take = (fraction * pool.len() as f64).round() as usize;
    let mut rng = rng::seeded(seed);
    pool.shuffle(&mut rng);
    Ok(UserSample {
        selected: pool.into_iter().take(take).cloned().collect(),
        seed,
        fraction,
    })
}

/// Split manifest: the split plus the fine-tuning sample that goes with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub sample: UserSample,
    pub users: Vec<SplitRow>,
    pub rejected: BTreeMap<UserId, SplitError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub user: UserId,
    /// Index of the validation item in the user's sequence.
    pub train_len: usize,
    pub train: Vec<ItemId>,
    pub validation: ItemId,
    pub test: ItemId,
}

impl SplitManifest {
    pub fn new(split: &EvalSplit, sample: UserSample) -> Self {
        Self {
            format: SPLIT_FORMAT.to_owned(),
            version: SPLIT_VERSION,
            generator: rng::GENERATOR.to_owned(),
            sample,
            users: split
                .users
                .iter()
                .map(|(user, s)| SplitRow {
                    user: user.clone(),
                    train_len: s.train.len(),
                    train: s.train.clone(),
                    validation: s.validation.clone(),
                    test: s.test.clone(),
                })
                .collect(),
            rejected: split.rejected.clone(),
        }
    }

    pub fn split(&self) -> EvalSplit {
        EvalSplit {
            users: self
                .users
                .iter()
                .map(|r| {
                    (
                        r.user.clone(),
                        UserSplit {
                            train: r.train.clone(),
                            validation: r.validation.clone(),
                            test: r.test.clone(),
                        },
                    )
                })
                .collect(),
            rejected: self.rejected.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), FileError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let m: Self = read_json(path)?;
        check_header(path, SPLIT_FORMAT, SPLIT_VERSION, &m.format, m.version)?;
        if let Some(bad) = m.users.iter().find(|r| r.train_len != r.train.len()) {
            return Err(FileError::Invalid {
                path: path.display().to_string(),
                message: format!("user `{}`: train_len disagrees with train list", bad.user),
            });
        }
        Ok(m)
    }
}
