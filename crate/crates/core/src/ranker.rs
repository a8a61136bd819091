//! LLM reranking: prompt assembly, completion parsing, grounding of the
//! returned strings against the candidate pool, and backfill to K items.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ItemId, UserId};
use crate::instructgen::{RenderMode, Renderer, Task, MAX_HISTORY};
use crate::llm_client::{CompletionClient, CompletionRequest, GenerationParams};
use crate::profiler::{build_profile_prompt, generate_profile, UserProfile};
use crate::retrieval::{top_k, CandidateSet, Retriever};
use crate::splitter::{EvalSplit, UserSplit};
use crate::text::{self, normalize, similarity};

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct RankingPrompt {
    pub user: UserId,
    pub history_text: String,
    pub profile_text: Option<String>,
    pub candidates: CandidateSet,
    pub rendered: String,
    pub k: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankError {
    #[error("user {0}: no candidates to rank")]
    EmptyCandidates(UserId),
    #[error("k must be >= 1")]
    ZeroK,
}

/// Instruction line, then the history sentence, the optional profile
/// sentence and the candidate sentence on one line.
pub fn build_ranking_prompt(
    user: &UserId,
    history: &[ItemId],
    profile: Option<&UserProfile>,
    candidates: &CandidateSet,
    k: usize,
    renderer: &Renderer<'_>,
) -> Result<RankingPrompt, RankError> {
    if k == 0 {
        return Err(RankError::ZeroK);
    }
    if candidates.is_empty() {
        return Err(RankError::EmptyCandidates(user.clone()));
    }
    let history = &history[history.len().saturating_sub(MAX_HISTORY)..];
    let history_text = renderer.history_sentence(history);
    let profile_text = profile.filter(|p| !p.keywords.is_empty()).map(|p| {
        let kws: Vec<String> = p.keywords.iter().map(|kw| text::quote(kw, renderer.style.quote)).collect();
        format!("The user's preferences are {}.", kws.join(", "))
    });
    let cand_ids: Vec<ItemId> = candidates.items().cloned().collect();
    let mut rendered = renderer.phrasing.instruction(Task::RecommendRetrieval, k);
    rendered.push('\n');
    rendered.push_str(&history_text);
    if let Some(p) = &profile_text {
        rendered.push(' ');
        rendered.push_str(p);
    }
    rendered.push(' ');
    rendered.push_str(&renderer.candidates_sentence(&cand_ids));
    Ok(RankingPrompt {
        user: user.clone(),
        history_text,
        profile_text,
        candidates: candidates.clone(),
        rendered,
        k,
    })
}

/// Item strings in a completion: quoted segments if there are any, else one
/// per line (or per comma on a single line) with list markers stripped.
/// Duplicates are kept.
pub fn parse_item_list(completion: &str, quote: char) -> Vec<String> {
    let quoted = text::parse_quoted(completion, quote);
    if !quoted.is_empty() {
        return quoted;
    }
    let lines: Vec<&str> = completion.lines().filter(|l| !l.trim().is_empty()).collect();
    let pieces: Vec<&str> = if lines.len() > 1 { lines } else { completion.split(',').collect() };
    pieces.into_iter().map(strip_marker).filter(|s| !s.is_empty()).collect()
}

fn strip_marker(raw: &str) -> String {
    let mut s = raw.trim();
    s = s.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && matches!(s.as_bytes().get(digits), Some(b'.' | b')')) {
        s = s[digits + 1..].trim_start();
    }
    s.trim().to_owned()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingScope {
    /// Only items in the user's candidate pool.
    #[default]
    Candidates,
    /// Any catalog item (for runs without a candidate list).
    Catalog,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub items: Vec<ItemId>,
    pub dropped: Vec<String>,
    pub duplicates: usize,
    pub fuzzy_matches: usize,
}

struct Target<'a> {
    id: &'a ItemId,
    title: String,
    display: String,
}

/// Maps raw strings to items: by id (when items render as `ID (title)`), then by exact
/// normalized title, then by the most similar title at or above
/// `threshold`. Unmatched strings are dropped; repeats are counted and
/// skipped. Among equally good matches an item not yet emitted wins.
pub fn ground(
    raw: &[String],
    pool: &[ItemId],
    renderer: &Renderer<'_>,
    threshold: f64,
) -> Grounding {
    let targets: Vec<Target<'_>> = pool
        .iter()
        .map(|id| {
            let title = renderer.catalog.get(id).map_or_else(|| id.as_str().to_owned(), |i| i.title.clone());
            Target { id, title: normalize(&title), display: normalize(&renderer.display_id(id)) }
        })
        .collect();
    let by_id: BTreeMap<&str, usize> = targets.iter().enumerate().map(|(p, t)| (t.id.as_str(), p)).collect();

    let mut out = Grounding::default();
    let mut emitted: HashSet<usize> = HashSet::new();
    for r in raw {
        let stripped = normalize_keep_case(r);
        // Titles like `1941 (1979)` look like `ID (title)`; only trust ids
        // when the prompt rendered them.
        let id_hit = (renderer.style.mode == RenderMode::IdAndTitle)
            .then(|| {
                embedded_id(&stripped)
                    .and_then(|id| by_id.get(id).copied())
                    .or_else(|| by_id.get(stripped.as_str()).copied())
            })
            .flatten();
        let n = normalize(r);
        let exact = || {
            let mut hits = targets.iter().enumerate().filter(|(_, t)| t.title == n || t.display == n).map(|(p, _)| p);
            let all: Vec<usize> = hits.by_ref().collect();
            all.iter().copied().find(|p| !emitted.contains(p)).or_else(|| all.first().copied())
        };
        let fuzzy = || {
            let n_len = n.chars().count();
            let mut best: Option<(f64, usize)> = None;
            for (p, t) in targets.iter().enumerate() {
                for cand in [&t.title, &t.display] {
                    let c_len = cand.chars().count();
                    let longest = n_len.max(c_len).max(1) as f64;
                    if (n_len.abs_diff(c_len) as f64) / longest > 1.0 - threshold {
                        continue;
                    }
                    let sim = similarity(&n, cand);
                    if sim < threshold {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((b, bp)) => {
                            sim > b || (sim == b && emitted.contains(&bp) && !emitted.contains(&p))
                        }
                    };
                    if better {
                        best = Some((sim, p));
                    }
                }
            }
            best.map(|(_, p)| p)
        };
        let (hit, was_fuzzy) = match id_hit.or_else(exact) {
            Some(p) => (Some(p), false),
            None => (fuzzy(), true),
        };
        match hit {
            Some(p) if emitted.insert(p) => {
                out.items.push(targets[p].id.clone());
                if was_fuzzy {
                    out.fuzzy_matches += 1;
                }
            }
            Some(_) => out.duplicates += 1,
            None => out.dropped.push(r.clone()),
        }
    }
    out
}

fn normalize_keep_case(s: &str) -> String {
    let lower = normalize(s);
    // `normalize` lower-cases; recover the original casing of the same text.
    let trimmed = s.trim().trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}' || c == '\'');
    if normalize(trimmed) == lower {
        trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        lower
    }
}

/// `B000G1MT2U (Mixed Chicks ...)` → `B000G1MT2U`.
fn embedded_id(s: &str) -> Option<&str> {
    let (id, rest) = s.split_once(" (")?;
    (rest.ends_with(')') && !id.is_empty() && !id.contains(' ')).then_some(id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: UserId,
    pub items: Vec<ItemId>,
    /// Items appended from retrieval order after the grounded ones.
    pub fill_count: usize,
    /// Completion strings rejected as hallucinations.
    pub dropped: Vec<String>,
    /// The completion could not be obtained; `items` is retrieval order.
    #[serde(default)]
    pub failed: bool,
    /// The candidate pool the list was chosen from, in retrieval order.
    #[serde(default)]
    pub pool: Vec<ItemId>,
}

/// Truncates `grounded` to `k`, then appends pool items in order until `k`.
pub fn fill_to_k(user: &UserId, grounded: &[ItemId], pool: &[ItemId], k: usize) -> RankedList {
    let mut items: Vec<ItemId> = grounded.iter().take(k).cloned().collect();
    let mut present: HashSet<ItemId> = items.iter().cloned().collect();
    let mut fill_count = 0;
    for c in pool {
        if items.len() >= k {
            break;
        }
        if present.insert(c.clone()) {
            items.push(c.clone());
            fill_count += 1;
        }
    }
    RankedList { user: user.clone(), items, fill_count, dropped: Vec::new(), failed: false, pool: pool.to_vec() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankConfig {
    pub k: usize,
    pub pool_size: usize,
    pub use_profile: bool,
    pub profile_items: usize,
    pub grounding: GroundingScope,
    pub fuzzy_threshold: f64,
    pub params: GenerationParams,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            k: 10,
            pool_size: 50,
            use_profile: false,
            profile_items: MAX_HISTORY,
            grounding: GroundingScope::Candidates,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
            params: GenerationParams::default(),
        }
    }
}

/// Everything that happened while ranking one user.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankTrace {
    pub user: UserId,
    pub candidates: Vec<ItemId>,
    pub candidate_fallback: bool,
    pub profile: Option<Vec<String>>,
    pub prompt: String,
    pub completion: Option<String>,
    pub parsed: Vec<String>,
    pub grounded: Vec<ItemId>,
    pub dropped: Vec<String>,
    pub duplicates: usize,
    pub fuzzy_matches: usize,
    pub fill_count: usize,
    pub failed: bool,
    pub errors: Vec<String>,
}

/// Retrieve → (profile) → prompt → complete → parse → ground → fill.
/// Client failures fall back to the retrieval order, flagged `failed`.
pub fn rank_user(
    user: &UserId,
    split: &UserSplit,
    model: &dyn Retriever,
    client: &dyn CompletionClient,
    config: &RankConfig,
    renderer: &Renderer<'_>,
    profile: Option<&UserProfile>,
) -> (RankedList, RankTrace) {
    let history = split.history();
    let candidates = top_k(model, user, &history, config.pool_size, &history);
    let pool: Vec<ItemId> = candidates.items().cloned().collect();
    let mut trace = RankTrace {
        user: user.clone(),
        candidates: pool.clone(),
        candidate_fallback: candidates.fallback,
        ..RankTrace::default()
    };

    let generated;
    let profile = match profile {
        Some(p) => Some(p),
        None if config.use_profile => {
            let made = build_profile_prompt(user, &history, renderer, config.profile_items)
                .and_then(|prompt| generate_profile(user, prompt, client, &config.params));
            match made {
                Ok(p) => {
                    generated = p;
                    Some(&generated)
                }
                Err(e) => {
                    trace.errors.push(format!("profile: {e}"));
                    None
                }
            }
        }
        None => None,
    };
    let profile = profile.filter(|_| config.use_profile);
    trace.profile = profile.map(|p| p.keywords.clone());

    let fail = |mut trace: RankTrace, msg: String| {
        let mut list = fill_to_k(user, &[], &pool, config.k);
        list.failed = true;
        trace.errors.push(msg);
        trace.failed = true;
        trace.fill_count = list.fill_count;
        (list, trace)
    };

    let prompt = match build_ranking_prompt(user, &history, profile, &candidates, config.k, renderer) {
        Ok(p) => p,
        Err(e) => return fail(trace, e.to_string()),
    };
    trace.prompt = prompt.rendered.clone();
    let request = CompletionRequest { prompt: prompt.rendered, params: config.params.clone(), user: Some(user.clone()) };
    let completion = match client.complete(&request) {
        Ok(r) => r.text,
        Err(e) => return fail(trace, e.to_string()),
    };
    let parsed = parse_item_list(&completion, renderer.style.quote);
    let grounding = match config.grounding {
        GroundingScope::Candidates => ground(&parsed, &pool, renderer, config.fuzzy_threshold),
        GroundingScope::Catalog => {
            let all: Vec<ItemId> = renderer.catalog.iter().map(|i| i.id.clone()).collect();
            ground(&parsed, &all, renderer, config.fuzzy_threshold)
        }
    };
    let mut list = fill_to_k(user, &grounding.items, &pool, config.k);
    list.dropped = grounding.dropped.clone();

    trace.completion = Some(completion);
    trace.parsed = parsed;
    trace.grounded = grounding.items;
    trace.dropped = grounding.dropped;
    trace.duplicates = grounding.duplicates;
    trace.fuzzy_matches = grounding.fuzzy_matches;
    trace.fill_count = list.fill_count;
    (list, trace)
}

/// Ranks every user of `split` (or only `users`, when given) in parallel.
pub fn rank_all(
    split: &EvalSplit,
    users: Option<&[UserId]>,
    model: &dyn Retriever,
    client: &dyn CompletionClient,
    config: &RankConfig,
    renderer: &Renderer<'_>,
    profiles: &BTreeMap<UserId, UserProfile>,
) -> BTreeMap<UserId, (RankedList, RankTrace)> {
    let selected: Vec<(&UserId, &UserSplit)> = match users {
        Some(us) => us.iter().filter_map(|u| split.users.get_key_value(u)).collect(),
        None => split.users.iter().collect(),
    };
    selected
        .par_iter()
        .map(|(u, s)| {
            let r = rank_user(u, s, model, client, config, renderer, profiles.get(*u));
            ((*u).clone(), r)
        })
        .collect()
}
