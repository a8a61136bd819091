//! Candidate retrieval: BPR matrix factorization, item co-occurrence,
//! popularity, and externally computed candidate lists.
//!
//! All models score a fixed item universe ([`ItemIndex`], ids sorted
//! ascending) so that ties can be broken by ascending id everywhere: in
//! [`top_k`] and in the full-ranking evaluation in [`crate::metrics`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ItemId, UserId};
use crate::rng;
use crate::snapshot::{check_header, read_json, write_json, FileError};
use crate::splitter::EvalSplit;

pub const MODEL_FORMAT: &str = "palr-bprmf";
pub const MODEL_VERSION: u32 = 1;

/// Items that can be retrieved, in ascending id order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemIndex {
    ids: Vec<ItemId>,
    pos: HashMap<ItemId, usize>,
}

impl ItemIndex {
    pub fn new<'a>(ids: impl IntoIterator<Item = &'a ItemId>) -> Self {
        let mut ids: Vec<ItemId> = ids.into_iter().cloned().collect();
        ids.sort();
        ids.dedup();
        let pos = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self { ids, pos }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, ix: usize) -> &ItemId {
        &self.ids[ix]
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn get(&self, id: &ItemId) -> Option<usize> {
        self.pos.get(id).copied()
    }

    /// `true` at the position of every listed id that is in the universe.
    pub fn mask(&self, ids: &[ItemId]) -> Vec<bool> {
        let mut m = vec![false; self.ids.len()];
        for id in ids {
            if let Some(ix) = self.get(id) {
                m[ix] = true;
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    BprMf,
    Cooc,
    Popularity,
    Imported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item: ItemId,
    pub score: f64,
}

/// Ranked, scored candidates for one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user: UserId,
    pub entries: Vec<Candidate>,
    pub source: CandidateSource,
    /// The model did not know this user and fell back to popularity order.
    #[serde(default)]
    pub fallback: bool,
}

impl CandidateSet {
    pub fn items(&self) -> impl Iterator<Item = &ItemId> {
        self.entries.iter().map(|c| &c.item)
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.entries.iter().any(|c| &c.item == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scores over a model's universe. `NEG_INFINITY` marks an item the model
/// cannot retrieve for this user at all.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub values: Vec<f64>,
    pub fallback: bool,
}

pub trait Retriever: Sync {
    fn source(&self) -> CandidateSource;

    fn universe(&self) -> &ItemIndex;

    /// Scores every universe item for `user`, whose known interactions so
    /// far are `history` (oldest first).
    fn score_all(&self, user: &UserId, history: &[ItemId]) -> Scores;
}

/// Ranking order: higher score first, then smaller universe index (= id).
#[inline]
pub fn rank_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` best items not in `exclude`. Unretrievable items never appear.
pub fn top_k(
    model: &dyn Retriever,
    user: &UserId,
    history: &[ItemId],
    k: usize,
    exclude: &[ItemId],
) -> CandidateSet {
    let scores = model.score_all(user, history);
    let universe = model.universe();
    let excluded = universe.mask(exclude);
    let mut pool: Vec<(f64, usize)> = scores
        .values
        .iter()
        .enumerate()
        .filter(|&(ix, s)| !excluded[ix] && *s != f64::NEG_INFINITY)
        .map(|(ix, &s)| (s, ix))
        .collect();
    if k < pool.len() {
        pool.select_nth_unstable_by(k, |a, b| rank_order(*a, *b));
        pool.truncate(k);
    }
    pool.sort_unstable_by(|a, b| rank_order(*a, *b));
    CandidateSet {
        user: user.clone(),
        entries: pool
            .into_iter()
            .map(|(score, ix)| Candidate { item: universe.id(ix).clone(), score })
            .collect(),
        source: model.source(),
        fallback: scores.fallback,
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no training interactions")]
    EmptyTrain,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("non-finite parameter after epoch {epoch} (learning rate {learning_rate} too high?)")]
    NonFinite { epoch: usize, learning_rate: f32 },
    #[error("candidate file line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("candidate file: user `{user}` lists item `{item}` more than once")]
    DuplicateCandidate { user: UserId, item: ItemId },
    #[error("candidate file: user `{0}` has more than one row")]
    DuplicateUser(UserId),
    #[error("candidate file: unknown item ids: {}", .0.iter().map(ItemId::as_str).collect::<Vec<_>>().join(", "))]
    UnknownItems(Vec<ItemId>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    File(#[from] FileError),
}

/// Per-user training items over a fixed universe.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub universe: ItemIndex,
    pub users: BTreeMap<UserId, Vec<usize>>,
}

impl TrainSet {
    /// Train prefixes of `split` (validation and test items held out).
    /// Items outside `universe` are ignored.
    pub fn from_split(split: &EvalSplit, universe: ItemIndex) -> Self {
        let users = split
            .users
            .iter()
            .map(|(u, s)| {
                let mut seen = HashSet::new();
                let items = s
                    .train
                    .iter()
                    .filter_map(|id| universe.get(id))
                    .filter(|ix| seen.insert(*ix))
                    .collect();
                (u.clone(), items)
            })
            .collect();
        Self { universe, users }
    }

    pub fn from_lists(universe: ItemIndex, lists: &BTreeMap<UserId, Vec<ItemId>>) -> Self {
        let users = lists
            .iter()
            .map(|(u, items)| {
                let mut seen = HashSet::new();
                let ixs = items
                    .iter()
                    .filter_map(|id| universe.get(id))
                    .filter(|ix| seen.insert(*ix))
                    .collect();
                (u.clone(), ixs)
            })
            .collect();
        Self { universe, users }
    }

    pub fn interactions(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    /// Number of users holding each item.
    pub fn item_frequency(&self) -> Vec<u32> {
        let mut freq = vec![0u32; self.universe.len()];
        for items in self.users.values() {
            for &ix in items {
                freq[ix] += 1;
            }
        }
        freq
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Popularity {
    #[serde(skip)]
    universe: ItemIndex,
    freq: Vec<u32>,
}

impl Popularity {
    pub fn train(train: &TrainSet) -> Self {
        Self { universe: train.universe.clone(), freq: train.item_frequency() }
    }

    pub fn frequency(&self, id: &ItemId) -> u32 {
        self.universe.get(id).map_or(0, |ix| self.freq[ix])
    }
}

impl Retriever for Popularity {
    fn source(&self) -> CandidateSource {
        CandidateSource::Popularity
    }

    fn universe(&self) -> &ItemIndex {
        &self.universe
    }

    fn score_all(&self, _user: &UserId, _history: &[ItemId]) -> Scores {
        Scores { values: self.freq.iter().map(|&f| f64::from(f)).collect(), fallback: false }
    }
}

/// Symmetric item–item co-occurrence counts over users' training items.
#[derive(Clone, Debug)]
pub struct CoocModel {
    universe: ItemIndex,
    /// Per item, `(other item, count)` sorted by other item; no self pairs.
    rows: Vec<Vec<(u32, u32)>>,
    freq: Vec<u32>,
}

/// Above this many cells the counts are accumulated sparsely.
const DENSE_COOC_LIMIT: usize = 1 << 25;

pub fn train_cooc(train: &TrainSet) -> CoocModel {
    let n = train.universe.len();
    let freq = train.item_frequency();
    let rows: Vec<Vec<(u32, u32)>> = if n.saturating_mul(n) <= DENSE_COOC_LIMIT {
        let mut dense = vec![0u32; n * n];
        for items in train.users.values() {
            for &a in items {
                let row = &mut dense[a * n..(a + 1) * n];
                for &b in items {
                    row[b] += 1;
                }
            }
        }
        (0..n)
            .map(|a| {
                dense[a * n..(a + 1) * n]
                    .iter()
                    .enumerate()
                    .filter(|&(b, &c)| b != a && c > 0)
                    .map(|(b, &c)| (b as u32, c))
                    .collect()
            })
            .collect()
    } else {
        let mut sparse: Vec<HashMap<u32, u32>> = vec![HashMap::new(); n];
        for items in train.users.values() {
            for &a in items {
                for &b in items {
                    if a != b {
                        *sparse[a].entry(b as u32).or_insert(0) += 1;
                    }
                }
            }
        }
        sparse
            .into_iter()
            .map(|m| {
                let mut row: Vec<(u32, u32)> = m.into_iter().collect();
                row.sort_unstable();
                row
            })
            .collect()
    };
    CoocModel { universe: train.universe.clone(), rows, freq }
}

impl CoocModel {
    /// Users holding both `a` and `b`; zero for `a == b` or unknown ids.
    pub fn count(&self, a: &ItemId, b: &ItemId) -> u32 {
        match (self.universe.get(a), self.universe.get(b)) {
            (Some(a), Some(b)) => self.count_ix(a, b),
            _ => 0,
        }
    }

    pub fn count_ix(&self, a: usize, b: usize) -> u32 {
        let row = &self.rows[a];
        row.binary_search_by_key(&(b as u32), |&(j, _)| j).map_or(0, |p| row[p].1)
    }

    pub fn frequency(&self, id: &ItemId) -> u32 {
        self.universe.get(id).map_or(0, |ix| self.freq[ix])
    }

    pub fn row(&self, ix: usize) -> &[(u32, u32)] {
        &self.rows[ix]
    }
}

impl Retriever for CoocModel {
    fn source(&self) -> CandidateSource {
        CandidateSource::Cooc
    }

    fn universe(&self) -> &ItemIndex {
        &self.universe
    }

    fn score_all(&self, _user: &UserId, history: &[ItemId]) -> Scores {
        let mut acc = vec![0u64; self.universe.len()];
        let mut seen = HashSet::new();
        for h in history {
            if let Some(ix) = self.universe.get(h) {
                if seen.insert(ix) {
                    for &(j, c) in &self.rows[ix] {
                        acc[j as usize] += u64::from(c);
                    }
                }
            }
        }
        Scores { values: acc.into_iter().map(|c| c as f64).collect(), fallback: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BprHyper {
    pub dim: usize,
    pub learning_rate: f32,
    pub l2: f32,
    pub epochs: usize,
    pub seed: u64,
    /// Factors start uniform in `[-init_scale, init_scale)`.
    pub init_scale: f32,
}

impl Default for BprHyper {
    fn default() -> Self {
        Self { dim: 64, learning_rate: 0.01, l2: 0.01, epochs: 50, seed: 42, init_scale: 0.01 }
    }
}

/// Matrix factorization trained with the BPR pairwise objective.
/// Score: `<user_factors[u], item_factors[i]> + item_bias[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BprMfModel {
    pub hp: BprHyper,
    universe: ItemIndex,
    users: Vec<UserId>,
    user_pos: HashMap<UserId, usize>,
    user_factors: Vec<f32>,
    item_factors: Vec<f32>,
    item_bias: Vec<f32>,
    popularity: Vec<u32>,
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// SGD ascent on `ln σ(x_ui − x_uj) − λ‖θ‖²` over `(u, i⁺, j⁻)` triples:
/// each epoch draws `|train|` positive pairs uniformly and a negative item
/// uniformly from the items the user has not interacted with.
pub fn train_bprmf(train: &TrainSet, hp: &BprHyper) -> Result<BprMfModel, RetrievalError> {
    if hp.dim == 0 {
        return Err(RetrievalError::InvalidHyper("dim must be >= 1".into()));
    }
    if !(hp.learning_rate > 0.0) || !hp.learning_rate.is_finite() {
        return Err(RetrievalError::InvalidHyper("learning rate must be > 0".into()));
    }
    if !(hp.l2 >= 0.0) {
        return Err(RetrievalError::InvalidHyper("l2 must be >= 0".into()));
    }
    let pairs: Vec<(usize, usize)> = train
        .users
        .values()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    if pairs.is_empty() {
        return Err(RetrievalError::EmptyTrain);
    }

    let n_items = train.universe.len();
    let d = hp.dim;
    let users: Vec<UserId> = train.users.keys().cloned().collect();
    let owned: Vec<HashSet<usize>> =
        train.users.values().map(|v| v.iter().copied().collect()).collect();

    let mut rng = rng::seeded(hp.seed);
    let s = hp.init_scale;
    let mut init = |n: usize| -> Vec<f32> {
        (0..n).map(|_| if s > 0.0 { rng.gen_range(-s..s) } else { 0.0 }).collect()
    };
    let mut user_factors = init(users.len() * d);
    let mut item_factors = init(n_items * d);
    let mut item_bias = vec![0.0f32; n_items];

    let lr = hp.learning_rate;
    let reg = hp.l2;
    let mut pu_old = vec![0.0f32; d];
    for epoch in 0..hp.epochs {
        for _ in 0..pairs.len() {
            let (u, i) = pairs[rng.gen_range(0..pairs.len())];
            if owned[u].len() >= n_items {
                continue;
            }
            let j = loop {
                let j = rng.gen_range(0..n_items);
                if !owned[u].contains(&j) {
                    break j;
                }
            };
            let pu = &mut user_factors[u * d..(u + 1) * d];
            let (qi, qj) = two_rows(&mut item_factors, i, j, d);
            let x_uij = dot(pu, qi) + item_bias[i] - dot(pu, qj) - item_bias[j];
            // d/dx ln σ(x) = σ(-x)
            let g = 1.0 / (1.0 + x_uij.exp());
            pu_old.copy_from_slice(pu);
            for f in 0..d {
                pu[f] += lr * (g * (qi[f] - qj[f]) - reg * pu[f]);
                qi[f] += lr * (g * pu_old[f] - reg * qi[f]);
                qj[f] += lr * (-g * pu_old[f] - reg * qj[f]);
            }
            item_bias[i] += lr * (g - reg * item_bias[i]);
            item_bias[j] += lr * (-g - reg * item_bias[j]);
        }
        let finite = user_factors
            .iter()
            .chain(&item_factors)
            .chain(&item_bias)
            .all(|x| x.is_finite());
        if !finite {
            return Err(RetrievalError::NonFinite { epoch: epoch + 1, learning_rate: lr });
        }
        log::debug!("bpr-mf epoch {}/{} done", epoch + 1, hp.epochs);
    }

    let user_pos = users.iter().enumerate().map(|(p, u)| (u.clone(), p)).collect();
    Ok(BprMfModel {
        hp: hp.clone(),
        universe: train.universe.clone(),
        users,
        user_pos,
        user_factors,
        item_factors,
        item_bias,
        popularity: train.item_frequency(),
    })
}

/// Disjoint mutable rows `i` and `j` (`i != j`) of a row-major matrix.
fn two_rows(m: &mut [f32], i: usize, j: usize, d: usize) -> (&mut [f32], &mut [f32]) {
    debug_assert_ne!(i, j);
    if i < j {
        let (lo, hi) = m.split_at_mut(j * d);
        (&mut lo[i * d..(i + 1) * d], &mut hi[..d])
    } else {
        let (lo, hi) = m.split_at_mut(i * d);
        (&mut hi[..d], &mut lo[j * d..(j + 1) * d])
    }
}

impl BprMfModel {
    pub fn dim(&self) -> usize {
        self.hp.dim
    }

    pub fn knows(&self, user: &UserId) -> bool {
        self.user_pos.contains_key(user)
    }

    pub fn score(&self, user: &UserId, item: &ItemId) -> Option<f64> {
        let u = *self.user_pos.get(user)?;
        let i = self.universe.get(item)?;
        let d = self.hp.dim;
        Some(f64::from(
            dot(&self.user_factors[u * d..(u + 1) * d], &self.item_factors[i * d..(i + 1) * d])
                + self.item_bias[i],
        ))
    }

    pub fn item_bias_mut(&mut self) -> &mut [f32] {
        &mut self.item_bias
    }

    pub fn save(&self, path: &Path) -> Result<(), FileError> {
        write_json(path, &ModelFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let file: ModelFile = read_json(path)?;
        check_header(path, MODEL_FORMAT, MODEL_VERSION, &file.format, file.version)?;
        let d = file.hp.dim;
        let bad = |message: String| FileError::Invalid { path: path.display().to_string(), message };
        if file.user_factors.len() != file.users.len()
            || file.item_factors.len() != file.items.len()
            || file.item_bias.len() != file.items.len()
            || file.popularity.len() != file.items.len()
        {
            return Err(bad("block sizes disagree with id lists".into()));
        }
        if file.user_factors.iter().chain(&file.item_factors).any(|r| r.len() != d) {
            return Err(bad(format!("factor rows must have dimension {d}")));
        }
        let universe = ItemIndex::new(&file.items);
        if universe.ids() != file.items.as_slice() {
            return Err(bad("item ids must be sorted and unique".into()));
        }
        let user_pos = file.users.iter().enumerate().map(|(p, u)| (u.clone(), p)).collect();
        Ok(Self {
            hp: file.hp,
            universe,
            users: file.users,
            user_pos,
            user_factors: file.user_factors.concat(),
            item_factors: file.item_factors.concat(),
            item_bias: file.item_bias,
            popularity: file.popularity,
        })
    }
}

impl Retriever for BprMfModel {
    fn source(&self) -> CandidateSource {
        CandidateSource::BprMf
    }

    fn universe(&self) -> &ItemIndex {
        &self.universe
    }

    fn score_all(&self, user: &UserId, _history: &[ItemId]) -> Scores {
        let d = self.hp.dim;
        match self.user_pos.get(user) {
            Some(&u) => {
                let pu = &self.user_factors[u * d..(u + 1) * d];
                let values = self
                    .item_factors
                    .chunks_exact(d)
                    .zip(&self.item_bias)
                    .map(|(qi, b)| f64::from(dot(pu, qi) + b))
                    .collect();
                Scores { values, fallback: false }
            }
            None => Scores {
                values: self.popularity.iter().map(|&f| f64::from(f)).collect(),
                fallback: true,
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    hp: BprHyper,
    users: Vec<UserId>,
    items: Vec<ItemId>,
    user_factors: Vec<Vec<f32>>,
    item_factors: Vec<Vec<f32>>,
    item_bias: Vec<f32>,
    popularity: Vec<u32>,
}

impl From<&BprMfModel> for ModelFile {
    fn from(m: &BprMfModel) -> Self {
        let d = m.hp.dim;
        Self {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            hp: m.hp.clone(),
            users: m.users.clone(),
            items: m.universe.ids().to_vec(),
            user_factors: m.user_factors.chunks_exact(d).map(<[f32]>::to_vec).collect(),
            item_factors: m.item_factors.chunks_exact(d).map(<[f32]>::to_vec).collect(),
            item_bias: m.item_bias.clone(),
            popularity: m.popularity.clone(),
        }
    }
}

/// Candidate lists computed elsewhere (e.g. a sequential model's top-50).
#[derive(Clone, Debug)]
pub struct ImportedCandidates {
    universe: ItemIndex,
    rows: BTreeMap<UserId, CandidateSet>,
}

#[derive(Clone, Debug, Default)]
pub struct ImportReport {
    pub warnings: Vec<String>,
}

/// Reads `user<TAB>item,item,...` rows (rank order, best first). An entry may
/// carry its own score as `item:score`; otherwise scores are `n - rank` with
/// 0-based rank. Blank lines and `#` comments are skipped.
pub fn import_candidates(
    reader: impl Read,
    universe: &ItemIndex,
) -> Result<(ImportedCandidates, ImportReport), RetrievalError> {
    let mut rows = BTreeMap::new();
    let mut unknown = Vec::new();
    let mut report = ImportReport::default();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((user, list)) = line.split_once('\t') else {
            return Err(RetrievalError::Syntax {
                line: lineno,
                message: "expected `user<TAB>items`".into(),
            });
        };
        let user = UserId::from(user.trim());
        if user.as_str().is_empty() {
            return Err(RetrievalError::Syntax { line: lineno, message: "empty user id".into() });
        }
        let raw: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let n_items = raw.len();
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(n_items);
        for (rank, entry) in raw.into_iter().enumerate() {
            let (id, score) = match entry.rsplit_once(':') {
                Some((id, s)) => match s.parse::<f64>() {
                    Ok(score) if score.is_finite() => (id, score),
                    _ => (entry, (n_items - rank) as f64),
                },
                None => (entry, (n_items - rank) as f64),
            };
            let item = ItemId::from(id);
            if !seen.insert(item.clone()) {
                return Err(RetrievalError::DuplicateCandidate { user, item });
            }
            if universe.get(&item).is_none() {
                unknown.push(item.clone());
            }
            entries.push(Candidate { item, score });
        }
        if entries.windows(2).any(|w| w[0].score < w[1].score) {
            report.warnings.push(format!("user `{user}`: scores not in rank order; rank order kept"));
        }
        let set = CandidateSet { user: user.clone(), entries, source: CandidateSource::Imported, fallback: false };
        if rows.insert(user.clone(), set).is_some() {
            return Err(RetrievalError::DuplicateUser(user));
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(RetrievalError::UnknownItems(unknown));
    }
    if rows.is_empty() {
        log::warn!("candidate file contains no rows");
        report.warnings.push("candidate file contains no rows".into());
    }
    Ok((ImportedCandidates { universe: universe.clone(), rows }, report))
}

impl ImportedCandidates {
    pub fn rows(&self) -> &BTreeMap<UserId, CandidateSet> {
        &self.rows
    }

    pub fn get(&self, user: &UserId) -> Option<&CandidateSet> {
        self.rows.get(user)
    }
}

impl Retriever for ImportedCandidates {
    fn source(&self) -> CandidateSource {
        CandidateSource::Imported
    }

    fn universe(&self) -> &ItemIndex {
        &self.universe
    }

    /// Listed items score by position; everything else is unretrievable.
    fn score_all(&self, user: &UserId, _history: &[ItemId]) -> Scores {
        let mut values = vec![f64::NEG_INFINITY; self.universe.len()];
        let Some(row) = self.rows.get(user) else {
            return Scores { values, fallback: true };
        };
        let n = row.entries.len();
        for (rank, c) in row.entries.iter().enumerate() {
            if let Some(ix) = self.universe.get(&c.item) {
                // Rank order is authoritative even if supplied scores disagree.
                values[ix] = (n - rank) as f64;
            }
        }
        Scores { values, fallback: false }
    }
}

/// Any of the built-in retrieval models.
#[derive(Clone, Debug)]
pub enum RetrievalModel {
    Popularity(Popularity),
    Cooc(CoocModel),
    BprMf(BprMfModel),
    Imported(ImportedCandidates),
}

impl RetrievalModel {
    fn inner(&self) -> &dyn Retriever {
        match self {
            Self::Popularity(m) => m,
            Self::Cooc(m) => m,
            Self::BprMf(m) => m,
            Self::Imported(m) => m,
        }
    }
}

impl Retriever for RetrievalModel {
    fn source(&self) -> CandidateSource {
        self.inner().source()
    }

    fn universe(&self) -> &ItemIndex {
        self.inner().universe()
    }

    fn score_all(&self, user: &UserId, history: &[ItemId]) -> Scores {
        self.inner().score_all(user, history)
    }
}
