//! Instruction-tuning corpora: "Recommend" (continue the history) and
//! "Recommend_Retrieval" (pick the future items out of a candidate list),
//! with short-history enrichment and history/target swap augmentation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{DatasetKind, InteractionLog, Item, ItemCatalog, ItemId, UserId};
use crate::retrieval::CoocModel;
use crate::rng;
use crate::snapshot::write_jsonl;
use crate::splitter::{EvalSplit, UserSample};
use crate::text;

/// Longest history rendered into any prompt.
pub const MAX_HISTORY: usize = 20;

/// Sentence that introduces the candidate list in inputs and prompts.
pub const CANDIDATES_LEAD: &str = "The candidates are ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    Recommend,
    #[serde(rename = "Recommend_Retrieval")]
    RecommendRetrieval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderMode {
    TitleOnly,
    IdAndTitle,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub mode: RenderMode,
    pub quote: char,
    pub separator: String,
}

impl RenderStyle {
    pub fn new(mode: RenderMode) -> Self {
        Self { mode, quote: '"', separator: ", ".to_owned() }
    }

    /// Titles for MovieLens, `ID (title)` for Amazon.
    pub fn for_dataset(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::MovieLens => Self::new(RenderMode::TitleOnly),
            DatasetKind::Amazon => Self::new(RenderMode::IdAndTitle),
        }
    }
}

/// Dataset-specific wording of instructions and history sentences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrasing {
    pub noun: String,
    pub history_ref: String,
    pub history_lead: String,
}

impl Phrasing {
    pub fn for_dataset(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::MovieLens => Self {
                noun: "movies".into(),
                history_ref: "user's watching history".into(),
                history_lead: "User watched movies".into(),
            },
            DatasetKind::Amazon => Self {
                noun: "items".into(),
                history_ref: "user's history".into(),
                history_lead: "User has purchased the following products".into(),
            },
        }
    }

    pub fn instruction(&self, task: Task, n: usize) -> String {
        let base = format!("Recommend {n} other {} based on {}", self.noun, self.history_ref);
        match task {
            Task::Recommend => format!("{base}."),
            Task::RecommendRetrieval => format!("{base} from the candidate list."),
        }
    }
}

/// Renders items and item lists against a catalog.
#[derive(Clone, Debug)]
pub struct Renderer<'a> {
    pub catalog: &'a ItemCatalog,
    pub style: RenderStyle,
    pub phrasing: Phrasing,
}

impl<'a> Renderer<'a> {
    pub fn new(catalog: &'a ItemCatalog, kind: DatasetKind) -> Self {
        Self { catalog, style: RenderStyle::for_dataset(kind), phrasing: Phrasing::for_dataset(kind) }
    }

    /// Unquoted display text: `title` or `id (title)`.
    pub fn display(&self, item: &Item) -> String {
        match self.style.mode {
            RenderMode::TitleOnly => item.title.clone(),
            RenderMode::IdAndTitle => format!("{} ({})", item.id, item.title),
        }
    }

    pub fn render_item(&self, item: &Item) -> String {
        text::quote(&self.display(item), self.style.quote)
    }

    /// Renders a catalog id; unknown ids render as their placeholder item.
    pub fn render_id(&self, id: &ItemId) -> String {
        match self.catalog.get(id) {
            Some(item) => self.render_item(item),
            None => self.render_item(&Item::placeholder(id.clone())),
        }
    }

    pub fn display_id(&self, id: &ItemId) -> String {
        match self.catalog.get(id) {
            Some(item) => self.display(item),
            None => id.as_str().to_owned(),
        }
    }

    pub fn render_list(&self, ids: &[ItemId]) -> String {
        ids.iter().map(|id| self.render_id(id)).collect::<Vec<_>>().join(&self.style.separator)
    }

    pub fn history_sentence(&self, history: &[ItemId]) -> String {
        format!("{} {}.", self.phrasing.history_lead, self.render_list(history))
    }

    pub fn candidates_sentence(&self, candidates: &[ItemId]) -> String {
        format!("{CANDIDATES_LEAD}{}.", self.render_list(candidates))
    }

    /// Parses quoted renderings back out of text produced by [`Self::render_list`].
    pub fn parse_list(&self, text: &str) -> Vec<String> {
        text::parse_quoted(text, self.style.quote)
    }
}

/// Byte offset of the first occurrence of `needle` outside quoted segments.
pub fn find_unquoted(haystack: &str, needle: &str, quote: char) -> Option<usize> {
    let mut in_straight = false;
    let mut in_curly = false;
    for (pos, c) in haystack.char_indices() {
        if !in_straight && !in_curly && haystack[pos..].starts_with(needle) {
            return Some(pos);
        }
        if c == quote && !in_curly {
            in_straight = !in_straight;
        } else if c == '\u{201c}' && !in_straight {
            in_curly = true;
        } else if c == '\u{201d}' && in_curly {
            in_curly = false;
        }
    }
    None
}

/// Text of the candidate section (after the lead sentence), if present.
pub fn candidate_section(prompt: &str, quote: char) -> Option<&str> {
    find_unquoted(prompt, CANDIDATES_LEAD, quote).map(|p| &prompt[p + CANDIDATES_LEAD.len()..])
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Position in the (possibly enriched) sequence where targets start.
    pub cut: usize,
    pub seed: u64,
    /// History/target exchanges applied by swap augmentation.
    pub swaps: usize,
    /// Items appended to the sequence by enrichment.
    pub synthetic_items: usize,
}

/// One fine-tuning record plus the item lists it was rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionExample {
    pub task: Task,
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub user: UserId,
    pub history: Vec<ItemId>,
    pub targets: Vec<ItemId>,
    pub candidates: Option<Vec<ItemId>>,
    pub list_size: usize,
    pub provenance: Provenance,
}

impl InstructionExample {
    /// Re-renders the text fields from the item lists.
    pub fn render(&mut self, r: &Renderer<'_>) {
        self.instruction = r.phrasing.instruction(self.task, self.list_size);
        self.input = r.history_sentence(&self.history);
        if let Some(c) = &self.candidates {
            self.input.push(' ');
            self.input.push_str(&r.candidates_sentence(c));
        }
        self.output = r.render_list(&self.targets);
    }

    pub fn record(&self) -> CorpusRecord<'_> {
        CorpusRecord {
            task: self.task,
            instruction: &self.instruction,
            input: &self.input,
            output: &self.output,
            user: &self.user,
            meta: CorpusMeta {
                cut: self.provenance.cut,
                seed: self.provenance.seed,
                swaps: self.provenance.swaps,
                synthetic_items: self.provenance.synthetic_items,
                history_len: self.history.len(),
                targets: self.targets.len(),
                candidates: self.candidates.as_ref().map(Vec::len),
            },
        }
    }
}

/// JSON-lines shape of an example.
#[derive(Debug, Serialize)]
pub struct CorpusRecord<'a> {
    pub task: Task,
    pub instruction: &'a str,
    pub input: &'a str,
    pub output: &'a str,
    pub user: &'a UserId,
    pub meta: CorpusMeta,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CorpusMeta {
    pub cut: usize,
    pub seed: u64,
    pub swaps: usize,
    pub synthetic_items: usize,
    pub history_len: usize,
    pub targets: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize)]
pub enum InstructError {
    #[error("cut {cut} must satisfy 1 <= cut < {len}")]
    InvalidCut { cut: usize, len: usize },
    #[error("at least one target is required")]
    NoTargets,
    #[error("user is not in the split")]
    UnknownUser,
}

/// "Recommend" example: up to `max_history` items before `cut` as history,
/// the next `n_targets` as the expected output.
pub fn make_recommend(
    user: &UserId,
    items: &[ItemId],
    cut: usize,
    n_targets: usize,
    renderer: &Renderer<'_>,
) -> Result<InstructionExample, InstructError> {
    if n_targets == 0 {
        return Err(InstructError::NoTargets);
    }
    if cut == 0 || cut >= items.len() {
        return Err(InstructError::InvalidCut { cut, len: items.len() });
    }
    let history = items[cut.saturating_sub(MAX_HISTORY)..cut].to_vec();
    let targets = items[cut..(cut + n_targets).min(items.len())].to_vec();
    let mut ex = InstructionExample {
        task: Task::Recommend,
        instruction: String::new(),
        input: String::new(),
        output: String::new(),
        user: user.clone(),
        history,
        targets,
        candidates: None,
        list_size: n_targets,
        provenance: Provenance { cut, ..Provenance::default() },
    };
    ex.render(renderer);
    Ok(ex)
}

/// Negatives similar to the targets. Each target ranks the remaining items
/// by (shares an attribute, co-occurrence count, ascending id); negatives are
/// then taken round-robin across targets. Returns fewer than `n_neg` when
/// the universe runs out.
pub fn select_negatives(
    targets: &[ItemId],
    cooc: &CoocModel,
    catalog: &ItemCatalog,
    n_neg: usize,
    forbidden: &HashSet<ItemId>,
) -> Vec<ItemId> {
    if n_neg == 0 || targets.is_empty() {
        return Vec::new();
    }
    let universe = crate::retrieval::Retriever::universe(cooc);
    let blocked: HashSet<&ItemId> = forbidden.iter().chain(targets).collect();
    let open: Vec<usize> = (0..universe.len()).filter(|&ix| !blocked.contains(universe.id(ix))).collect();
    let attrs_of = |id: &ItemId| -> Vec<&str> {
        catalog.get(id).map(|it| it.attributes.iter().map(String::as_str).collect()).unwrap_or_default()
    };

    // A list never needs to advance past 2 * n_neg entries: every step either
    // picks a new item or skips one already picked.
    let depth = (2 * n_neg).min(open.len());
    let ranked: Vec<Vec<usize>> = targets
        .iter()
        .map(|t| {
            let t_attrs = attrs_of(t);
            let t_ix = universe.get(t);
            let mut keyed: Vec<(bool, u32, usize)> = open
                .iter()
                .map(|&ix| {
                    let shares = attrs_of(universe.id(ix)).iter().any(|a| t_attrs.contains(a));
                    let count = t_ix.map_or(0, |t| cooc.count_ix(t, ix));
                    (shares, count, ix)
                })
                .collect();
            let cmp = |a: &(bool, u32, usize), b: &(bool, u32, usize)| {
                b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2))
            };
            if depth < keyed.len() {
                keyed.select_nth_unstable_by(depth, cmp);
                keyed.truncate(depth);
            }
            keyed.sort_unstable_by(cmp);
            keyed.into_iter().map(|k| k.2).collect()
        })
        .collect();

    let mut picked = Vec::with_capacity(n_neg);
    let mut taken = HashSet::new();
    let mut cursors = vec![0usize; ranked.len()];
    while picked.len() < n_neg {
        let mut progressed = false;
        for (list, cur) in ranked.iter().zip(cursors.iter_mut()) {
            if picked.len() == n_neg {
                break;
            }
            while *cur < list.len() {
                let ix = list[*cur];
                *cur += 1;
                if taken.insert(ix) {
                    picked.push(universe.id(ix).clone());
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            log::warn!("negative sampling exhausted after {} of {n_neg} items", picked.len());
            break;
        }
    }
    picked
}

/// Everything needed to add negatives to a "Recommend" example.
pub struct NegativeSource<'a> {
    pub cooc: &'a CoocModel,
    /// Items that must never be offered (e.g. the user's held-out test item).
    pub forbidden: &'a HashSet<ItemId>,
}

/// "Recommend_Retrieval" example: targets plus `n_neg` similar negatives,
/// shuffled with `shuffle_seed`, appended to the input as a candidate list.
#[allow(clippy::too_many_arguments)]
pub fn make_recommend_retrieval(
    user: &UserId,
    items: &[ItemId],
    cut: usize,
    n_targets: usize,
    n_neg: usize,
    negatives: &NegativeSource<'_>,
    renderer: &Renderer<'_>,
    shuffle_seed: u64,
) -> Result<InstructionExample, InstructError> {
    let mut ex = make_recommend(user, items, cut, n_targets, renderer)?;
    let mut forbidden: HashSet<ItemId> = negatives.forbidden.clone();
    forbidden.extend(items.iter().cloned());
    let negs = select_negatives(&ex.targets, negatives.cooc, renderer.catalog, n_neg, &forbidden);
    let mut candidates: Vec<ItemId> = ex.targets.iter().cloned().chain(negs).collect();
    candidates.shuffle(&mut rng::seeded(shuffle_seed));
    ex.task = Task::RecommendRetrieval;
    ex.candidates = Some(candidates);
    ex.provenance.seed = shuffle_seed;
    ex.render(renderer);
    Ok(ex)
}

/// Bipartite user–item adjacency for affinity walks.
#[derive(Clone, Debug, Default)]
pub struct AffinityGraph {
    item_users: HashMap<ItemId, Vec<UserId>>,
    user_items: HashMap<UserId, Vec<ItemId>>,
}

impl AffinityGraph {
    pub fn from_lists<'a>(lists: impl IntoIterator<Item = (&'a UserId, &'a [ItemId])>) -> Self {
        let mut g = Self::default();
        for (user, items) in lists {
            for item in items {
                g.add(user, item);
            }
        }
        g
    }

    pub fn from_log(log: &InteractionLog) -> Self {
        let mut g = Self::default();
        for x in log.interactions() {
            g.add(&x.user, &x.item);
        }
        g
    }

    fn add(&mut self, user: &UserId, item: &ItemId) {
        let items = self.user_items.entry(user.clone()).or_default();
        if !items.contains(item) {
            items.push(item.clone());
            self.item_users.entry(item.clone()).or_default().push(user.clone());
        }
    }

    /// Split-visible interactions only: train prefixes and validation items.
    pub fn from_split(split: &EvalSplit) -> Self {
        let lists: Vec<(UserId, Vec<ItemId>)> =
            split.users.iter().map(|(u, s)| (u.clone(), s.history())).collect();
        Self::from_lists(lists.iter().map(|(u, v)| (u, v.as_slice())))
    }
}

/// Extends a short sequence with items from its 3-hop neighbourhood
/// (item → other user who has it → that user's other items), ranked by the
/// number of distinct such users, then ascending id. At most `budget`
/// items are appended, and only while `seq` is shorter than `min_len`.
pub fn enrich_3hop(
    user: &UserId,
    seq: &[ItemId],
    graph: &AffinityGraph,
    min_len: usize,
    budget: usize,
    forbidden: &HashSet<ItemId>,
) -> (Vec<ItemId>, usize) {
    if seq.len() >= min_len || budget == 0 {
        return (seq.to_vec(), 0);
    }
    let in_seq: HashSet<&ItemId> = seq.iter().collect();
    let mut reach: BTreeMap<&ItemId, BTreeSet<&UserId>> = BTreeMap::new();
    for item in seq {
        for other in graph.item_users.get(item).into_iter().flatten() {
            if other == user {
                continue;
            }
            for next in graph.user_items.get(other).into_iter().flatten() {
                if !in_seq.contains(next) && !forbidden.contains(next) {
                    reach.entry(next).or_default().insert(other);
                }
            }
        }
    }
    let mut ranked: Vec<(&ItemId, usize)> = reach.into_iter().map(|(i, us)| (i, us.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut out = seq.to_vec();
    let added: Vec<ItemId> = ranked.into_iter().take(budget).map(|(i, _)| i.clone()).collect();
    let n = added.len();
    out.extend(added);
    (out, n)
}

/// With probability `p` per history item, exchanges it with a uniformly
/// chosen target. The candidate list (if any) swaps the same pair, so it
/// keeps containing every target.
pub fn swap_augment(
    ex: &InstructionExample,
    p: f64,
    seed: u64,
    renderer: &Renderer<'_>,
) -> InstructionExample {
    let mut out = ex.clone();
    if !(p > 0.0) || out.history.is_empty() || out.targets.is_empty() {
        return out;
    }
    let p = p.min(1.0);
    let mut rng = rng::seeded(seed);
    for h in 0..out.history.len() {
        if !rng.gen_bool(p) {
            continue;
        }
        let t = rng.gen_range(0..out.targets.len());
        let old_target = out.targets[t].clone();
        std::mem::swap(&mut out.history[h], &mut out.targets[t]);
        if let Some(cands) = out.candidates.as_mut() {
            if let Some(slot) = cands.iter_mut().find(|c| **c == old_target) {
                *slot = out.targets[t].clone();
            }
        }
        out.provenance.swaps += 1;
    }
    out.render(renderer);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub tasks: Vec<Task>,
    pub n_targets: usize,
    /// Targets plus negatives in "Recommend_Retrieval" examples.
    pub pool_size: usize,
    pub p_swap: f64,
    pub enrich: bool,
    pub enrich_min_len: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            tasks: vec![Task::Recommend, Task::RecommendRetrieval],
            n_targets: 10,
            pool_size: 50,
            p_swap: 0.1,
            enrich: true,
            enrich_min_len: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub examples: Vec<InstructionExample>,
    pub errors: Vec<(UserId, InstructError)>,
}

/// Examples for every sampled user, ordered by user then task. Targets are
/// the most recent visible items (train prefix + validation); test items
/// never appear.
pub fn build_corpus(
    split: &EvalSplit,
    sample: &UserSample,
    renderer: &Renderer<'_>,
    cooc: &CoocModel,
    graph: &AffinityGraph,
    config: &CorpusConfig,
) -> Corpus {
    let mut tasks = config.tasks.clone();
    tasks.sort();
    tasks.dedup();
    let users: Vec<&UserId> = sample.selected.iter().collect();
    let per_user: Vec<Result<Vec<InstructionExample>, (UserId, InstructError)>> = users
        .par_iter()
        .map(|user| {
            let s = split.users.get(*user).ok_or_else(|| ((*user).clone(), InstructError::UnknownUser))?;
            user_examples(user, s, renderer, cooc, graph, config, &tasks)
                .map_err(|e| ((*user).clone(), e))
        })
        .collect();
    let mut corpus = Corpus::default();
    for r in per_user {
        match r {
            Ok(xs) => corpus.examples.extend(xs),
            Err(e) => corpus.errors.push(e),
        }
    }
    corpus
}

fn user_examples(
    user: &UserId,
    s: &crate::splitter::UserSplit,
    renderer: &Renderer<'_>,
    cooc: &CoocModel,
    graph: &AffinityGraph,
    config: &CorpusConfig,
    tasks: &[Task],
) -> Result<Vec<InstructionExample>, InstructError> {
    let forbidden: HashSet<ItemId> = std::iter::once(s.test.clone()).collect();
    let visible = s.history();
    let (items, synthetic) = if config.enrich {
        let budget = config.enrich_min_len.saturating_sub(visible.len());
        enrich_3hop(user, &visible, graph, config.enrich_min_len, budget, &forbidden)
    } else {
        (visible, 0)
    };
    let cut = items.len().saturating_sub(config.n_targets).max(1);
    let mut user_rng = rng::keyed(config.seed, user.as_str());
    let mut out = Vec::with_capacity(tasks.len());
    for &task in tasks {
        let shuffle_seed: u64 = user_rng.gen();
        let swap_seed: u64 = user_rng.gen();
        let mut ex = match task {
            Task::Recommend => make_recommend(user, &items, cut, config.n_targets, renderer)?,
            Task::RecommendRetrieval => {
                let n_neg = config.pool_size.saturating_sub(config.n_targets.min(items.len() - cut));
                make_recommend_retrieval(
                    user,
                    &items,
                    cut,
                    config.n_targets,
                    n_neg,
                    &NegativeSource { cooc, forbidden: &forbidden },
                    renderer,
                    shuffle_seed,
                )?
            }
        };
        ex.provenance.synthetic_items = synthetic;
        if config.p_swap > 0.0 {
            ex = swap_augment(&ex, config.p_swap, swap_seed, renderer);
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_corpus(w: &mut impl Write, examples: &[InstructionExample]) -> io::Result<()> {
    let records: Vec<CorpusRecord<'_>> = examples.iter().map(InstructionExample::record).collect();
    write_jsonl(w, &records)
}
