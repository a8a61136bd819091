//! HR@K and NDCG@K against the held-out test item, for full-catalog
//! retrieval and for reranked lists.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{ItemId, UserId};
use crate::ranker::RankedList;
use crate::retrieval::Retriever;
use crate::splitter::EvalSplit;

/// 1-based position of the target, or `Miss` when it cannot appear at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRank {
    At(usize),
    Miss,
}

impl TargetRank {
    pub fn within(self, k: usize) -> bool {
        matches!(self, TargetRank::At(r) if r <= k)
    }
}

pub fn rank_of_target(list: &[ItemId], target: &ItemId) -> TargetRank {
    list.iter().position(|i| i == target).map_or(TargetRank::Miss, |p| TargetRank::At(p + 1))
}

pub fn hr_at_k(rank: TargetRank, k: usize) -> f64 {
    if rank.within(k) { 1.0 } else { 0.0 }
}

/// A single relevant item, so the ideal DCG is 1.
pub fn ndcg_at_k(rank: TargetRank, k: usize) -> f64 {
    match rank {
        TargetRank::At(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Pairwise (tree) summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionPolicy {
    /// Items in the user's train and validation prefix cannot be ranked.
    #[default]
    SeenExcluded,
    /// Every universe item competes with the target.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub user: UserId,
    pub target: ItemId,
    pub rank: TargetRank,
    /// Whether the target was in the candidate pool handed to the reranker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_pool: Option<bool>,
    #[serde(default)]
    pub failed: bool,
    #[serde(default)]
    pub missing: bool,
}

/// Full-ranking position of every selected user's test item.
/// Rank = 1 + number of admissible items scoring higher, or equal with a
/// smaller id. An unretrievable or unknown target is a miss.
pub fn evaluate_retrieval(
    model: &dyn Retriever,
    split: &EvalSplit,
    users: Option<&BTreeSet<UserId>>,
    policy: ExclusionPolicy,
    pool_size: Option<usize>,
) -> Vec<UserOutcome> {
    let selected: Vec<_> = split
        .users
        .iter()
        .filter(|(u, _)| users.is_none_or(|set| set.contains(*u)))
        .collect();
    selected
        .par_iter()
        .map(|(user, s)| {
            let history = s.history();
            let scores = model.score_all(user, &history);
            let universe = model.universe();
            let rank = match universe.get(&s.test) {
                Some(t) if scores.values[t] != f64::NEG_INFINITY => {
                    let st = scores.values[t];
                    let excluded = match policy {
                        ExclusionPolicy::SeenExcluded => universe.mask(&history),
                        ExclusionPolicy::None => vec![false; universe.len()],
                    };
                    let ahead = scores
                        .values
                        .iter()
                        .enumerate()
                        .filter(|&(j, &sj)| j != t && !excluded[j] && (sj > st || (sj == st && j < t)))
                        .count();
                    TargetRank::At(ahead + 1)
                }
                _ => TargetRank::Miss,
            };
            UserOutcome {
                user: (*user).clone(),
                target: s.test.clone(),
                rank,
                in_pool: pool_size.map(|p| rank.within(p)),
                failed: false,
                missing: false,
            }
        })
        .collect()
}

/// Scores reranked lists. Selected users without a list are flagged
/// `missing`; reports leave them out of the means.
pub fn evaluate_lists(
    lists: &BTreeMap<UserId, RankedList>,
    split: &EvalSplit,
    users: Option<&BTreeSet<UserId>>,
) -> Vec<UserOutcome> {
    split
        .users
        .iter()
        .filter(|(u, _)| users.is_none_or(|set| set.contains(*u)))
        .map(|(user, s)| match lists.get(user) {
            Some(list) => UserOutcome {
                user: user.clone(),
                target: s.test.clone(),
                rank: rank_of_target(&list.items, &s.test),
                in_pool: Some(list.pool.contains(&s.test)),
                failed: list.failed,
                missing: false,
            },
            None => UserOutcome {
                user: user.clone(),
                target: s.test.clone(),
                rank: TargetRank::Miss,
                in_pool: None,
                failed: false,
                missing: true,
            },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub slice: String,
    pub ks: Vec<usize>,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub users: usize,
    /// Users dropped by the splitter (too short for leave-one-out).
    pub skipped_users: usize,
    pub missing_users: usize,
    pub failed_users: usize,
    /// Fraction of users whose test item was in the candidate pool: the best
    /// HR any reranker of that pool can reach.
    pub ceiling: Option<f64>,
    /// HR and NDCG over only the users whose target was in the pool.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hr_in_pool: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ndcg_in_pool: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

impl MetricsReport {
    /// Aggregates outcomes in user-id order so the same ranks always give
    /// bit-identical means.
    pub fn from_outcomes(slice: &str, outcomes: &[UserOutcome], ks: &[usize]) -> Self {
        let mut sorted: Vec<&UserOutcome> = outcomes.iter().filter(|o| !o.missing).collect();
        sorted.sort_by(|a, b| a.user.cmp(&b.user));
        let pooled: Vec<&UserOutcome> = sorted.iter().copied().filter(|o| o.in_pool == Some(true)).collect();
        let mut hr = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        let mut hr_in_pool = BTreeMap::new();
        let mut ndcg_in_pool = BTreeMap::new();
        for &k in ks {
            hr.insert(k, mean(&sorted, |o| hr_at_k(o.rank, k)));
            ndcg.insert(k, mean(&sorted, |o| ndcg_at_k(o.rank, k)));
            if !pooled.is_empty() {
                hr_in_pool.insert(k, mean(&pooled, |o| hr_at_k(o.rank, k)));
                ndcg_in_pool.insert(k, mean(&pooled, |o| ndcg_at_k(o.rank, k)));
            }
        }
        let has_pool = sorted.iter().any(|o| o.in_pool.is_some());
        let ceiling = has_pool.then(|| mean(&sorted, |o| if o.in_pool == Some(true) { 1.0 } else { 0.0 }));
        MetricsReport {
            slice: slice.to_owned(),
            ks: ks.to_vec(),
            hr,
            ndcg,
            users: sorted.len(),
            skipped_users: 0,
            missing_users: outcomes.iter().filter(|o| o.missing).count(),
            failed_users: sorted.iter().filter(|o| o.failed).count(),
            ceiling,
            hr_in_pool,
            ndcg_in_pool,
            manifest: None,
        }
    }

    pub fn hr(&self, k: usize) -> f64 {
        self.hr.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }
}

fn mean(outcomes: &[&UserOutcome], f: impl Fn(&UserOutcome) -> f64) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let xs: Vec<f64> = outcomes.iter().map(|o| f(o)).collect();
    pairwise_sum(&xs) / outcomes.len() as f64
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<12} users={:<6}", self.slice, self.users)?;
        for k in &self.ks {
            write!(f, " HR@{k}={:.4}", self.hr(*k))?;
        }
        for k in &self.ks {
            write!(f, " NDCG@{k}={:.4}", self.ndcg(*k))?;
        }
        if let Some(c) = self.ceiling {
            write!(f, " ceiling={c:.4}")?;
        }
        if self.missing_users > 0 || self.failed_users > 0 || self.skipped_users > 0 {
            write!(f, " skipped={} missing={} failed={}", self.skipped_users, self.missing_users, self.failed_users)?;
        }
        Ok(())
    }
}
