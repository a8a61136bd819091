//! Dataset ingestion: raw MovieLens / Amazon dumps to binarized,
//! deduplicated, k-core filtered, chronologically ordered user sequences.

use std::borrow::{Borrow, Cow};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, BufReader, Read};

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::normalize;

/// Share of malformed lines (per input file) above which parsing aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(ItemId);
string_id!(UserId);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    pub attributes: Vec<String>,
}

impl Item {
    /// Trims the title (falling back to the id when blank) and drops repeated
    /// or blank attributes, keeping first occurrences.
    pub fn new(id: ItemId, title: &str, attributes: impl IntoIterator<Item = String>) -> Self {
        let title = match title.trim() {
            "" => id.as_str().to_owned(),
            t => t.to_owned(),
        };
        let mut attrs: Vec<String> = Vec::new();
        for a in attributes {
            let a = a.trim();
            if !a.is_empty() && !attrs.iter().any(|x| x == a) {
                attrs.push(a.to_owned());
            }
        }
        Self { id, title, attributes: attrs }
    }

    pub fn placeholder(id: ItemId) -> Self {
        let title = id.as_str().to_owned();
        Self { id, title, attributes: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
    pub value: u8,
}

impl Interaction {
    pub fn new(user: impl Into<UserId>, item: impl Into<ItemId>, timestamp: i64) -> Self {
        Self { user: user.into(), item: item.into(), timestamp, value: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users: {}  items: {}  interactions: {}",
            self.users, self.items, self.interactions
        )
    }
}

/// Binarized interaction events in input order, with per-id counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    user_counts: BTreeMap<UserId, usize>,
    item_counts: BTreeMap<ItemId, usize>,
}

impl InteractionLog {
    pub fn new(interactions: Vec<Interaction>) -> Self {
        let mut user_counts = BTreeMap::new();
        let mut item_counts = BTreeMap::new();
        for x in &interactions {
            *user_counts.entry(x.user.clone()).or_insert(0) += 1;
            *item_counts.entry(x.item.clone()).or_insert(0) += 1;
        }
        Self { interactions, user_counts, item_counts }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn into_interactions(self) -> Vec<Interaction> {
        self.interactions
    }

    pub fn user_counts(&self) -> &BTreeMap<UserId, usize> {
        &self.user_counts
    }

    pub fn item_counts(&self) -> &BTreeMap<ItemId, usize> {
        &self.item_counts
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.user_counts.len(),
            items: self.item_counts.len(),
            interactions: self.interactions.len(),
        }
    }
}

/// Item metadata plus an index from normalized title to ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Item>", into = "Vec<Item>")]
pub struct ItemCatalog {
    items: BTreeMap<ItemId, Item>,
    title_index: HashMap<String, Vec<ItemId>>,
}

impl From<Vec<Item>> for ItemCatalog {
    fn from(items: Vec<Item>) -> Self {
        let mut catalog = Self::default();
        for item in items {
            catalog.insert(item);
        }
        catalog
    }
}

impl From<ItemCatalog> for Vec<Item> {
    fn from(c: ItemCatalog) -> Self {
        c.items.into_values().collect()
    }
}

impl ItemCatalog {
    /// Adds `item` unless its id is already present; returns whether it was added.
    pub fn insert(&mut self, item: Item) -> bool {
        if self.items.contains_key(&item.id) {
            return false;
        }
        self.title_index.entry(normalize(&item.title)).or_default().push(item.id.clone());
        self.items.insert(item.id.clone(), item);
        true
    }

    pub fn get(&self, id: &ItemId) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.items.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.items.values()
    }

    /// Ids whose normalized title equals `normalized` (see [`normalize`]).
    pub fn ids_with_title(&self, normalized: &str) -> &[ItemId] {
        self.title_index.get(normalized).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Catalog restricted to the given ids; ids absent here are skipped.
    pub fn restricted_to<'a>(&self, ids: impl IntoIterator<Item = &'a ItemId>) -> Self {
        let mut out = Self::default();
        for id in ids {
            if let Some(item) = self.items.get(id) {
                out.insert(item.clone());
            }
        }
        out
    }
}

/// Dataset family; decides the file formats and the wording of prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    #[serde(rename = "movielens-1m", alias = "movielens")]
    MovieLens,
    #[serde(rename = "amazon", alias = "amazon-beauty")]
    Amazon,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "movielens" | "movielens-1m" | "ml-1m" => Ok(Self::MovieLens),
            "amazon" | "amazon-beauty" | "beauty" => Ok(Self::Amazon),
            other => Err(format!("unknown dataset kind `{other}` (expected movielens-1m or amazon)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MalformedLine {
    pub source: &'static str,
    pub line: usize,
    pub reason: String,
}

/// What the parsers saw besides the data itself.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub interaction_lines: usize,
    pub item_lines: usize,
    pub malformed: Vec<MalformedLine>,
    /// Items referenced by interactions but missing from the metadata file.
    pub placeholder_items: usize,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(
        "{source_name}: {malformed} of {lines} lines malformed (limit {limit_pct}%); first: line {first_line}: {first_reason}"
    )]
    TooManyMalformed {
        source_name: &'static str,
        malformed: usize,
        lines: usize,
        limit_pct: f64,
        first_line: usize,
        first_reason: String,
    },
}

/// Wraps `reader` in a gzip decoder when it starts with the gzip magic bytes.
pub fn maybe_gunzip<'a, R: Read + 'a>(reader: R) -> io::Result<Box<dyn BufRead + 'a>> {
    let mut buf = BufReader::new(reader);
    let head = buf.fill_buf()?;
    if head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buf))))
    } else {
        Ok(Box::new(buf))
    }
}

/// UTF-8 when valid, Latin-1 otherwise (every byte maps to one code point).
fn decode_lenient(bytes: &[u8]) -> Cow<'_, str> {
    match std::str::from_utf8(bytes) {
        Ok(s) => Cow::Borrowed(s),
        Err(_) => Cow::Owned(bytes.iter().map(|&b| b as char).collect()),
    }
}

/// Iterates non-blank lines as `(1-based line number, decoded text)`.
fn for_each_line(
    reader: impl Read,
    mut f: impl FnMut(usize, &str),
) -> io::Result<()> {
    let mut reader = maybe_gunzip(reader)?;
    let mut buf = Vec::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        lineno += 1;
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        let line = decode_lenient(&buf);
        if line.trim().is_empty() {
            continue;
        }
        f(lineno, &line);
    }
    Ok(())
}

struct LineTally {
    source: &'static str,
    lines: usize,
    malformed: Vec<MalformedLine>,
}

impl LineTally {
    fn new(source: &'static str) -> Self {
        Self { source, lines: 0, malformed: Vec::new() }
    }

    fn bad(&mut self, line: usize, reason: impl Into<String>) {
        let reason = reason.into();
        log::debug!("{}:{line}: {reason}", self.source);
        self.malformed.push(MalformedLine { source: self.source, line, reason });
    }

    fn check(self, report: &mut ParseReport) -> Result<usize, CatalogError> {
        let n_bad = self.malformed.len();
        if self.lines > 0 && n_bad as f64 > MAX_MALFORMED_FRACTION * self.lines as f64 {
            let first = &self.malformed[0];
            return Err(CatalogError::TooManyMalformed {
                source_name: self.source,
                malformed: n_bad,
                lines: self.lines,
                limit_pct: MAX_MALFORMED_FRACTION * 100.0,
                first_line: first.line,
                first_reason: first.reason.clone(),
            });
        }
        if n_bad > 0 {
            log::warn!("{}: skipped {n_bad} malformed line(s) of {}", self.source, self.lines);
        }
        report.malformed.extend(self.malformed);
        Ok(self.lines)
    }
}

/// Adds placeholder items for every interaction item missing from `catalog`.
fn close_catalog(log: &InteractionLog, catalog: &mut ItemCatalog) -> usize {
    log.item_counts()
        .keys()
        .filter(|id| catalog.insert(Item::placeholder((*id).clone())))
        .count()
}

/// Parses MovieLens-1M `ratings.dat` and `movies.dat` (`::`-separated).
pub fn parse_movielens(
    ratings: impl Read,
    movies: impl Read,
) -> Result<(InteractionLog, ItemCatalog, ParseReport), CatalogError> {
    let mut report = ParseReport::default();

    let mut tally = LineTally::new("ratings");
    let mut interactions = Vec::new();
    for_each_line(ratings, |lineno, line| {
        tally.lines += 1;
        match parse_rating_line(line) {
            Ok(x) => interactions.push(x),
            Err(reason) => tally.bad(lineno, reason),
        }
    })?;
    report.interaction_lines = tally.check(&mut report)?;

    let mut tally = LineTally::new("movies");
    let mut catalog = ItemCatalog::default();
    for_each_line(movies, |lineno, line| {
        tally.lines += 1;
        let mut parts = line.splitn(3, "::");
        match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(title), genres) if !id.trim().is_empty() => {
                let attrs = genres
                    .unwrap_or("")
                    .split('|')
                    .map(str::to_owned)
                    .collect::<Vec<_>>();
                catalog.insert(Item::new(ItemId::from(id.trim()), title, attrs));
            }
            _ => tally.bad(lineno, "expected MovieID::Title::Genres"),
        }
    })?;
    report.item_lines = tally.check(&mut report)?;

    let log = InteractionLog::new(interactions);
    report.placeholder_items = close_catalog(&log, &mut catalog);
    Ok((log, catalog, report))
}

fn parse_rating_line(line: &str) -> Result<Interaction, String> {
    let fields: Vec<&str> = line.split("::").map(str::trim).collect();
    let [user, item, rating, ts] = fields[..] else {
        return Err(format!("expected 4 `::`-separated fields, got {}", fields.len()));
    };
    if user.is_empty() || item.is_empty() {
        return Err("empty user or movie id".into());
    }
    rating.parse::<f64>().map_err(|_| format!("bad rating `{rating}`"))?;
    let timestamp = parse_timestamp(ts)?;
    Ok(Interaction::new(user, item, timestamp))
}

fn parse_timestamp(ts: &str) -> Result<i64, String> {
    match ts.parse::<i64>() {
        Ok(t) if t >= 0 => Ok(t),
        _ => Err(format!("bad timestamp `{ts}`")),
    }
}

/// Parses Amazon review and metadata dumps (JSON-lines, optionally gzipped).
///
/// Review lines need `reviewerID`, `asin` and `unixReviewTime`; bare
/// `user,item,rating,timestamp` CSV rows are accepted too. Metadata lines
/// may be strict JSON or the Python-literal form of the older dumps.
pub fn parse_amazon(
    reviews: impl Read,
    meta: impl Read,
) -> Result<(InteractionLog, ItemCatalog, ParseReport), CatalogError> {
    let mut report = ParseReport::default();

    let mut tally = LineTally::new("reviews");
    let mut interactions = Vec::new();
    for_each_line(reviews, |lineno, line| {
        tally.lines += 1;
        match parse_review_line(line) {
            Ok(x) => interactions.push(x),
            Err(reason) => tally.bad(lineno, reason),
        }
    })?;
    report.interaction_lines = tally.check(&mut report)?;

    let mut tally = LineTally::new("meta");
    let mut catalog = ItemCatalog::default();
    for_each_line(meta, |lineno, line| {
        tally.lines += 1;
        match parse_meta_line(line) {
            Ok(item) => {
                catalog.insert(item);
            }
            Err(reason) => tally.bad(lineno, reason),
        }
    })?;
    report.item_lines = tally.check(&mut report)?;

    let log = InteractionLog::new(interactions);
    report.placeholder_items = close_catalog(&log, &mut catalog);
    Ok((log, catalog, report))
}

fn parse_record(line: &str) -> Result<Value, String> {
    match serde_json::from_str::<Value>(line) {
        Ok(v) => Ok(v),
        Err(e) => pylit::parse(line).ok_or_else(|| format!("not a JSON record: {e}")),
    }
}

fn str_field<'a>(v: &'a Value, key: &str) -> Result<&'a str, String> {
    match v.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim()),
        Some(_) => Err(format!("field `{key}` is not a non-empty string")),
        None => Err(format!("missing field `{key}`")),
    }
}

fn parse_review_line(line: &str) -> Result<Interaction, String> {
    if !line.trim_start().starts_with('{') {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if let [user, item, _rating, ts] = fields[..] {
            if !user.is_empty() && !item.is_empty() {
                return Ok(Interaction::new(user, item, parse_timestamp(ts)?));
            }
        }
        return Err("expected a JSON record or user,item,rating,timestamp".into());
    }
    let v = parse_record(line)?;
    let user = str_field(&v, "reviewerID")?;
    let item = str_field(&v, "asin")?;
    let timestamp = match v.get("unixReviewTime") {
        Some(Value::Number(n)) => n
            .as_i64()
            .filter(|t| *t >= 0)
            .ok_or_else(|| format!("bad unixReviewTime `{n}`"))?,
        Some(Value::String(s)) => parse_timestamp(s.trim())?,
        Some(_) => return Err("bad unixReviewTime".into()),
        None => return Err("missing field `unixReviewTime`".into()),
    };
    Ok(Interaction::new(user, item, timestamp))
}

fn parse_meta_line(line: &str) -> Result<Item, String> {
    let v = parse_record(line)?;
    let asin = str_field(&v, "asin")?;
    let title = v.get("title").and_then(Value::as_str).unwrap_or("");
    let mut attrs = Vec::new();
    // `categories` is a list of category paths; `category` a single path.
    match v.get("categories") {
        Some(Value::Array(paths)) => {
            for path in paths {
                match path {
                    Value::Array(p) => {
                        if let Some(Value::String(leaf)) = p.last() {
                            attrs.push(leaf.clone());
                        }
                    }
                    Value::String(s) => attrs.push(s.clone()),
                    _ => {}
                }
            }
        }
        _ => {
            if let Some(Value::Array(path)) = v.get("category") {
                if let Some(Value::String(leaf)) = path.last() {
                    attrs.push(leaf.clone());
                }
            }
        }
    }
    Ok(Item::new(ItemId::from(asin), &decode_entities(title), attrs))
}

fn decode_entities(s: &str) -> Cow<'_, str> {
    if !s.contains('&') {
        return Cow::Borrowed(s);
    }
    Cow::Owned(
        s.replace("&amp;", "&")
            .replace("&quot;", "\"")
            .replace("&#39;", "'")
            .replace("&lt;", "<")
            .replace("&gt;", ">"),
    )
}

/// Keeps, per (user, item) pair, the earliest interaction; equal timestamps
/// keep the first in input order. Survivors stay in input order.
pub fn dedupe(log: &InteractionLog) -> InteractionLog {
    let xs = log.interactions();
    let mut best: HashMap<(&UserId, &ItemId), usize> = HashMap::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        best.entry((&x.user, &x.item))
            .and_modify(|b| {
                if x.timestamp < xs[*b].timestamp {
                    *b = i;
                }
            })
            .or_insert(i);
    }
    let mut keep = vec![false; xs.len()];
    for i in best.into_values() {
        keep[i] = true;
    }
    InteractionLog::new(
        xs.iter().zip(keep).filter(|(_, k)| *k).map(|(x, _)| x.clone()).collect(),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CoreReport {
    pub passes: usize,
    pub removed_users: usize,
    pub removed_items: usize,
}

/// Iterative k-core: alternately drops every user, then every item, with
/// fewer than `k` surviving interactions until nothing changes.
pub fn k_core(log: &InteractionLog, k: usize) -> (InteractionLog, CoreReport) {
    let xs = log.interactions();
    let mut user_ix: HashMap<&UserId, usize> = HashMap::new();
    let mut item_ix: HashMap<&ItemId, usize> = HashMap::new();
    let pairs: Vec<(usize, usize)> = xs
        .iter()
        .map(|x| {
            let n = user_ix.len();
            let u = *user_ix.entry(&x.user).or_insert(n);
            let n = item_ix.len();
            let i = *item_ix.entry(&x.item).or_insert(n);
            (u, i)
        })
        .collect();
    let mut user_alive = vec![true; user_ix.len()];
    let mut item_alive = vec![true; item_ix.len()];
    let mut report = CoreReport::default();

    loop {
        report.passes += 1;
        let mut changed = false;

        let mut counts = vec![0usize; user_alive.len()];
        for &(u, i) in &pairs {
            if user_alive[u] && item_alive[i] {
                counts[u] += 1;
            }
        }
        for (alive, c) in user_alive.iter_mut().zip(&counts) {
            if *alive && *c < k {
                *alive = false;
                report.removed_users += 1;
                changed = true;
            }
        }

        let mut counts = vec![0usize; item_alive.len()];
        for &(u, i) in &pairs {
            if user_alive[u] && item_alive[i] {
                counts[i] += 1;
            }
        }
        for (alive, c) in item_alive.iter_mut().zip(&counts) {
            if *alive && *c < k {
                *alive = false;
                report.removed_items += 1;
                changed = true;
            }
        }

        if !changed {
            break;
        }
    }

    let kept: Vec<Interaction> = xs
        .iter()
        .zip(&pairs)
        .filter(|(_, &(u, i))| user_alive[u] && item_alive[i])
        .map(|(x, _)| x.clone())
        .collect();
    if kept.is_empty() && !xs.is_empty() {
        log::warn!("{k}-core filtering removed every interaction; dataset too sparse");
    }
    (InteractionLog::new(kept), report)
}

pub fn five_core_filter(log: &InteractionLog) -> (InteractionLog, CoreReport) {
    k_core(log, 5)
}

/// A user's items in chronological order, with matching timestamps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub timestamps: Vec<i64>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Groups `log` by user and sorts each group by timestamp (stable, so equal
/// timestamps keep input order). A repeated item keeps its first position.
pub fn build_sequences(log: &InteractionLog) -> BTreeMap<UserId, UserSequence> {
    let mut grouped: BTreeMap<&UserId, Vec<&Interaction>> = BTreeMap::new();
    for x in log.interactions() {
        grouped.entry(&x.user).or_default().push(x);
    }
    grouped
        .into_iter()
        .map(|(user, mut xs)| {
            xs.sort_by_key(|x| x.timestamp);
            let mut seen = std::collections::HashSet::new();
            let mut items = Vec::with_capacity(xs.len());
            let mut timestamps = Vec::with_capacity(xs.len());
            for x in xs {
                if seen.insert(&x.item) {
                    items.push(x.item.clone());
                    timestamps.push(x.timestamp);
                }
            }
            (user.clone(), UserSequence { user: user.clone(), items, timestamps })
        })
        .collect()
}

/// Minimal reader for Python dict literals (`{'asin': 'B00..', ...}`), the
/// format of the older Amazon metadata dumps.
mod pylit {
    use serde_json::{Map, Number, Value};

    pub fn parse(s: &str) -> Option<Value> {
        let mut p = Parser { s: s.as_bytes(), pos: 0, src: s };
        let v = p.value()?;
        p.ws();
        (p.pos == p.s.len()).then_some(v)
    }

    struct Parser<'a> {
        s: &'a [u8],
        src: &'a str,
        pos: usize,
    }

    impl Parser<'_> {
        fn ws(&mut self) {
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
        }

        fn peek(&self) -> Option<u8> {
            self.s.get(self.pos).copied()
        }

        fn eat(&mut self, b: u8) -> bool {
            self.ws();
            if self.peek() == Some(b) {
                self.pos += 1;
                true
            } else {
                false
            }
        }

        fn value(&mut self) -> Option<Value> {
            self.ws();
            match self.peek()? {
                b'{' => self.dict(),
                b'[' | b'(' => self.list(),
                b'\'' | b'"' => self.string().map(Value::String),
                b'-' | b'0'..=b'9' => self.number(),
                _ => self.word(),
            }
        }

        fn dict(&mut self) -> Option<Value> {
            self.pos += 1;
            let mut map = Map::new();
            if self.eat(b'}') {
                return Some(Value::Object(map));
            }
            loop {
                self.ws();
                let key = match self.value()? {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                if !self.eat(b':') {
                    return None;
                }
                let v = self.value()?;
                map.insert(key, v);
                if self.eat(b',') {
                    if self.eat(b'}') {
                        break;
                    }
                    continue;
                }
                if self.eat(b'}') {
                    break;
                }
                return None;
            }
            Some(Value::Object(map))
        }

        fn list(&mut self) -> Option<Value> {
            let close = if self.s[self.pos] == b'[' { b']' } else { b')' };
            self.pos += 1;
            let mut out = Vec::new();
            if self.eat(close) {
                return Some(Value::Array(out));
            }
            loop {
                out.push(self.value()?);
                if self.eat(b',') {
                    if self.eat(close) {
                        break;
                    }
                    continue;
                }
                if self.eat(close) {
                    break;
                }
                return None;
            }
            Some(Value::Array(out))
        }

        fn string(&mut self) -> Option<String> {
            let q = self.s[self.pos];
            self.pos += 1;
            let mut out = String::new();
            let mut start = self.pos;
            while self.pos < self.s.len() {
                let b = self.s[self.pos];
                if b == q {
                    out.push_str(&self.src[start..self.pos]);
                    self.pos += 1;
                    return Some(out);
                }
                if b == b'\\' {
                    out.push_str(&self.src[start..self.pos]);
                    let esc = *self.s.get(self.pos + 1)?;
                    self.pos += 2;
                    match esc {
                        b'n' => out.push('\n'),
                        b't' => out.push('\t'),
                        b'r' => out.push('\r'),
                        b'x' => {
                            let hex = self.src.get(self.pos..self.pos + 2)?;
                            out.push(char::from_u32(u32::from_str_radix(hex, 16).ok()?)?);
                            self.pos += 2;
                        }
                        b'u' => {
                            let hex = self.src.get(self.pos..self.pos + 4)?;
                            out.push(char::from_u32(u32::from_str_radix(hex, 16).ok()?)?);
                            self.pos += 4;
                        }
                        other => out.push(other as char),
                    }
                    start = self.pos;
                    continue;
                }
                self.pos += 1;
            }
            None
        }

        fn number(&mut self) -> Option<Value> {
            let start = self.pos;
            self.pos += 1;
            while matches!(self.peek(), Some(b'0'..=b'9' | b'.' | b'e' | b'E' | b'+' | b'-')) {
                self.pos += 1;
            }
            let text = &self.src[start..self.pos];
            if let Ok(i) = text.parse::<i64>() {
                return Some(Value::Number(i.into()));
            }
            Number::from_f64(text.parse().ok()?).map(Value::Number)
        }

        fn word(&mut self) -> Option<Value> {
            let start = self.pos;
            while matches!(self.peek(), Some(b) if b.is_ascii_alphabetic()) {
                self.pos += 1;
            }
            match &self.src[start..self.pos] {
                "True" => Some(Value::Bool(true)),
                "False" => Some(Value::Bool(false)),
                "None" => Some(Value::Null),
                _ => None,
            }
        }
    }
}
