//! Deterministic clustered interaction data in MovieLens-1M file format,
//! for tests, benchmarks and smoke runs without the real dumps.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::{Interaction, InteractionLog, Item, ItemCatalog, ItemId};
use crate::rng;

const GENRES: [&str; 8] = ["Action", "Comedy", "Drama", "Horror", "Romance", "Sci-Fi", "Thriller", "Western"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that an interaction comes from the user's own cluster.
    pub affinity: f64,
    /// Zipf exponent of item popularity inside a cluster.
    pub skew: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { users: 600, items: 400, clusters: 8, min_len: 8, max_len: 40, affinity: 0.85, skew: 0.8, seed: 1 }
    }
}

pub struct SyntheticData {
    pub log: InteractionLog,
    pub catalog: ItemCatalog,
}

fn item_id(i: usize) -> ItemId {
    ItemId::from((i + 1).to_string())
}

fn title(i: usize) -> String {
    format!("Synthetic Film {} ({})", i + 1, 1950 + i % 50)
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticData {
    assert!(cfg.clusters >= 1 && cfg.items >= cfg.clusters, "need at least one item per cluster");
    assert!(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len, "bad length range");
    let members: Vec<Vec<usize>> =
        (0..cfg.clusters).map(|c| (c..cfg.items).step_by(cfg.clusters).collect()).collect();
    let weights = |n: usize| WeightedIndex::new((0..n).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.skew))).unwrap();
    let cluster_dist: Vec<WeightedIndex<f64>> = members.iter().map(|m| weights(m.len())).collect();
    let global_dist = weights(cfg.items);

    let mut r = rng::seeded(cfg.seed);
    let mut interactions = Vec::new();
    for u in 0..cfg.users {
        let user = (u + 1).to_string();
        let home = r.gen_range(0..cfg.clusters);
        let len = r.gen_range(cfg.min_len..=cfg.max_len).min(cfg.items);
        let mut seen = vec![false; cfg.items];
        let mut ts = 978_300_000 + r.gen_range(0..1_000_000i64);
        let mut placed = 0;
        let mut tries = 0;
        while placed < len && tries < len * 50 {
            tries += 1;
            let item = if r.gen_bool(cfg.affinity) {
                members[home][cluster_dist[home].sample(&mut r)]
            } else {
                global_dist.sample(&mut r)
            };
            if seen[item] {
                continue;
            }
            seen[item] = true;
            placed += 1;
            ts += r.gen_range(1..3_600i64);
            interactions.push(Interaction::new(user.as_str(), item_id(item), ts));
        }
    }
    let catalog: ItemCatalog = (0..cfg.items)
        .map(|i| Item::new(item_id(i), &title(i), [GENRES[i % cfg.clusters % GENRES.len()].to_owned()]))
        .collect::<Vec<_>>()
        .into();
    SyntheticData { log: InteractionLog::new(interactions), catalog }
}

impl SyntheticData {
    /// `ratings.dat` and `movies.dat` contents.
    pub fn to_movielens(&self) -> (String, String) {
        let mut ratings = String::new();
        for x in self.log.interactions() {
            let _ = writeln!(ratings, "{}::{}::4::{}", x.user, x.item, x.timestamp);
        }
        let mut movies = String::new();
        for item in self.catalog.iter() {
            let _ = writeln!(movies, "{}::{}::{}", item.id, item.title, item.attributes.join("|"));
        }
        (ratings, movies)
    }
}
