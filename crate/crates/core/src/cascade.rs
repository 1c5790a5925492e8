//! Tweet-event ingestion, cascade tree reconstruction and hourly binning.
//!
//! Input is JSONL with one event per line:
//!
//! ```text
//! {"id":"42","user_id":"u7","ts":"2018-04-01T12:00:00Z","action":"retweet","parent_id":"41"}
//! ```
//!
//! `parent_id` is omitted for `root` events and required otherwise. Unknown
//! keys are ignored.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::models::Activity;

pub const SECONDS_PER_HOUR: i64 = 3600;

/// UTC instant with second precision, stored as Unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn parse(s: &str) -> Result<Self> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.timestamp()))
            .map_err(|e| Error::invalid(format!("bad RFC 3339 timestamp {s:?}: {e}")))
    }

    pub fn seconds(self) -> i64 {
        self.0
    }

    pub fn plus_seconds(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::<Utc>::from_timestamp(self.0, 0) {
            Some(dt) => f.write_str(&dt.to_rfc3339_opts(SecondsFormat::Secs, true)),
            None => write!(f, "@{}", self.0),
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Root,
    Retweet,
    Quote,
    Reply,
}

impl Action {
    pub fn activity(self) -> Option<Activity> {
        match self {
            Action::Root => None,
            Action::Retweet => Some(Activity::Retweet),
            Action::Quote => Some(Activity::Quote),
            Action::Reply => Some(Activity::Reply),
        }
    }
}

impl From<Activity> for Action {
    fn from(a: Activity) -> Self {
        match a {
            Activity::Retweet => Action::Retweet,
            Activity::Quote => Action::Quote,
            Activity::Reply => Action::Reply,
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "root" => Ok(Action::Root),
            "retweet" => Ok(Action::Retweet),
            "quote" => Ok(Action::Quote),
            "reply" => Ok(Action::Reply),
            other => Err(Error::invalid(format!("unknown action {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TweetEvent {
    pub id: String,
    pub user_id: String,
    pub ts: Timestamp,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

impl TweetEvent {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("empty id"));
        }
        match (self.action, &self.parent_id) {
            (Action::Root, Some(_)) => Err(Error::invalid("root event must not have parent_id")),
            (Action::Root, None) => Ok(()),
            (_, None) => Err(Error::invalid("non-root event requires parent_id")),
            (_, Some(p)) if p.is_empty() => Err(Error::invalid("empty parent_id")),
            (_, Some(_)) => Ok(()),
        }
    }
}

/// Loose mirror of the input schema so that every problem with a line is
/// reported as a malformed-line reason instead of a serde message.
#[derive(Deserialize)]
struct RawEvent {
    id: Option<String>,
    user_id: Option<String>,
    ts: Option<String>,
    action: Option<String>,
    parent_id: Option<String>,
}

impl RawEvent {
    fn into_event(self) -> Result<TweetEvent> {
        let missing = |k: &str| Error::invalid(format!("missing key {k:?}"));
        let event = TweetEvent {
            id: self.id.ok_or_else(|| missing("id"))?,
            user_id: self.user_id.ok_or_else(|| missing("user_id"))?,
            ts: Timestamp::parse(&self.ts.ok_or_else(|| missing("ts"))?)?,
            action: self.action.ok_or_else(|| missing("action"))?.parse()?,
            parent_id: self.parent_id,
        };
        event.validate()?;
        Ok(event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub events: Vec<TweetEvent>,
    pub malformed: Vec<MalformedLine>,
}

/// Parse a JSONL event stream. Blank lines are skipped. Line numbers are
/// 1-based.
pub fn parse_events<R: BufRead>(reader: R, strict: bool) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawEvent>(&line)
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(RawEvent::into_event);
        match parsed {
            Ok(event) => {
                if let Some(&first_line) = seen.get(&event.id) {
                    return Err(Error::DuplicateId { id: event.id, first_line, line: lineno });
                }
                seen.insert(event.id.clone(), lineno);
                out.events.push(event);
            }
            Err(e) => {
                let reason = match e {
                    Error::InvalidArgument(m) => m,
                    other => other.to_string(),
                };
                if strict {
                    return Err(Error::Parse { line: lineno, message: reason });
                }
                log::warn!("skipping malformed line {lineno}: {reason}");
                out.malformed.push(MalformedLine { line: lineno, reason });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeNode {
    pub event: TweetEvent,
    pub parent: Option<String>,
    pub depth: usize,
}

/// Role of a node in its cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    /// Starts the cascade; has no parent.
    Root,
    /// Has a parent and at least one child.
    Parent,
    /// Has a parent and no children.
    Child,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeTree {
    pub root_id: String,
    pub nodes: BTreeMap<String, CascadeNode>,
}

impl CascadeTree {
    /// Number of reactions (the root is not counted).
    pub fn size(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn root(&self) -> &TweetEvent {
        &self.nodes[&self.root_id].event
    }

    pub fn role(&self, id: &str) -> Option<NodeRole> {
        let node = self.nodes.get(id)?;
        if node.parent.is_none() {
            return Some(NodeRole::Root);
        }
        let has_child = self.nodes.values().any(|n| n.parent.as_deref() == Some(id));
        Some(if has_child { NodeRole::Parent } else { NodeRole::Child })
    }

    /// Events with the root first, then by `(ts, id)`.
    pub fn events_sorted(&self) -> Vec<TweetEvent> {
        let mut rest: Vec<&TweetEvent> = self
            .nodes
            .values()
            .filter(|n| n.parent.is_some())
            .map(|n| &n.event)
            .collect();
        rest.sort_by(|a, b| (a.ts, &a.id).cmp(&(b.ts, &b.id)));
        std::iter::once(self.root().clone()).chain(rest.into_iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildOutcome {
    /// One tree per root, ordered by root id.
    pub trees: Vec<CascadeTree>,
    /// Ids of events whose parent chain never reaches a root, sorted.
    pub orphans: Vec<String>,
}

#[derive(Clone, Copy)]
enum Resolution {
    Unvisited,
    InProgress,
    Attached { root: usize, depth: usize },
    Orphan,
}

/// Group events into rooted trees by following `parent_id` links
/// transitively. Events are expected to have unique ids; a repeated id is
/// reported as an orphan.
pub fn build_cascades(events: &[TweetEvent]) -> BuildOutcome {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(events.len());
    let mut duplicates = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match index.entry(e.id.as_str()) {
            Entry::Occupied(_) => duplicates.push(i),
            Entry::Vacant(slot) => {
                slot.insert(i);
            }
        }
    }

    let mut state = vec![Resolution::Unvisited; events.len()];
    for &d in &duplicates {
        state[d] = Resolution::Orphan;
    }
    let mut stack = Vec::new();
    for start in 0..events.len() {
        if !matches!(state[start], Resolution::Unvisited) {
            continue;
        }
        // Walk up until something resolved, a root, a gap or a cycle.
        let mut cur = start;
        let base = loop {
            match state[cur] {
                Resolution::Attached { root, depth } => break Resolution::Attached { root, depth },
                Resolution::Orphan | Resolution::InProgress => break Resolution::Orphan,
                Resolution::Unvisited => {}
            }
            let e = &events[cur];
            if e.action == Action::Root {
                state[cur] = Resolution::Attached { root: cur, depth: 0 };
                break Resolution::Attached { root: cur, depth: 0 };
            }
            state[cur] = Resolution::InProgress;
            stack.push(cur);
            match e.parent_id.as_deref().and_then(|p| index.get(p)) {
                Some(&parent) => cur = parent,
                None => break Resolution::Orphan,
            }
        };
        let mut resolved = base;
        while let Some(i) = stack.pop() {
            resolved = match resolved {
                Resolution::Attached { root, depth } => Resolution::Attached { root, depth: depth + 1 },
                _ => Resolution::Orphan,
            };
            state[i] = resolved;
        }
    }

    let mut trees: BTreeMap<usize, CascadeTree> = BTreeMap::new();
    let mut orphans = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match state[i] {
            Resolution::Attached { root, depth } => {
                let tree = trees.entry(root).or_insert_with(|| CascadeTree {
                    root_id: events[root].id.clone(),
                    nodes: BTreeMap::new(),
                });
                tree.nodes.insert(
                    e.id.clone(),
                    CascadeNode { event: e.clone(), parent: e.parent_id.clone(), depth },
                );
            }
            _ => orphans.push(e.id.clone()),
        }
    }
    let mut trees: Vec<CascadeTree> = trees.into_values().collect();
    trees.sort_by(|a, b| a.root_id.cmp(&b.root_id));
    orphans.sort();
    BuildOutcome { trees, orphans }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// Up to the bin of the last event.
    Auto,
    Hours(u32),
}

impl FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Horizon::Auto);
        }
        s.parse::<u32>()
            .ok()
            .filter(|h| *h > 0)
            .map(Horizon::Hours)
            .ok_or_else(|| Error::invalid(format!("horizon must be 'auto' or a positive integer, got {s:?}")))
    }
}

/// Cumulative hourly reaction counts per activity, anchored at the root.
///
/// Entry `j` counts reactions with offset `< (j + 1)` hours from the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivitySeries {
    pub t0: Timestamp,
    pub retweet: Vec<u64>,
    pub quote: Vec<u64>,
    pub reply: Vec<u64>,
    pub total: Vec<u64>,
}

impl ActivitySeries {
    /// Build from per-activity cumulative vectors; `total` is derived.
    pub fn from_channels(t0: Timestamp, channels: [Vec<u64>; 3]) -> Result<Self> {
        let n = channels[0].len();
        if n == 0 || channels.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("channel series must be non-empty and of equal length"));
        }
        if channels.iter().any(|c| c.windows(2).any(|w| w[1] < w[0])) {
            return Err(Error::invalid("cumulative series must be non-decreasing"));
        }
        let total = (0..n).map(|j| channels[0][j] + channels[1][j] + channels[2][j]).collect();
        let [retweet, quote, reply] = channels;
        Ok(ActivitySeries { t0, retweet, quote, reply, total })
    }

    pub fn n_obs(&self) -> usize {
        self.total.len()
    }

    pub fn horizon_hours(&self) -> usize {
        self.n_obs().saturating_sub(1)
    }

    pub fn channel(&self, activity: Activity) -> &[u64] {
        match activity {
            Activity::Retweet => &self.retweet,
            Activity::Quote => &self.quote,
            Activity::Reply => &self.reply,
        }
    }

    pub fn total_f64(&self) -> Vec<f64> {
        self.total.iter().map(|&v| v as f64).collect()
    }

    pub fn channel_f64(&self, activity: Activity) -> Vec<f64> {
        self.channel(activity).iter().map(|&v| v as f64).collect()
    }

    pub fn final_total(&self) -> u64 {
        self.total.last().copied().unwrap_or(0)
    }

    /// Structural checks used when reading series from disk.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::from_channels(self.t0, [self.retweet.clone(), self.quote.clone(), self.reply.clone()])?;
        if rebuilt.total != self.total {
            return Err(Error::invalid("total series is not the sum of the activity series"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binned {
    pub series: ActivitySeries,
    /// Reactions that fell beyond the horizon and were left out.
    pub truncated: usize,
}

pub fn binned_series(tree: &CascadeTree, horizon: Horizon) -> Result<Binned> {
    let t0 = tree.root().ts;
    let mut offenders = Vec::new();
    let mut binned: Vec<(usize, Activity)> = Vec::with_capacity(tree.size());
    for node in tree.nodes.values() {
        let Some(activity) = node.event.action.activity() else { continue };
        let offset = node.event.ts.seconds() - t0.seconds();
        if offset < 0 {
            offenders.push(node.event.id.clone());
            continue;
        }
        binned.push(((offset / SECONDS_PER_HOUR) as usize, activity));
    }
    if !offenders.is_empty() {
        return Err(Error::ClockSkew { offenders });
    }
    let horizon = match horizon {
        Horizon::Auto => binned.iter().map(|(b, _)| *b).max().unwrap_or(0),
        Horizon::Hours(h) => h as usize,
    };
    let mut counts = [vec![0u64; horizon + 1], vec![0u64; horizon + 1], vec![0u64; horizon + 1]];
    let mut truncated = 0;
    for (bin, activity) in binned {
        if bin > horizon {
            truncated += 1;
        } else {
            counts[activity.index()][bin] += 1;
        }
    }
    for c in counts.iter_mut() {
        for j in 1..c.len() {
            c[j] += c[j - 1];
        }
    }
    Ok(Binned { series: ActivitySeries::from_channels(t0, counts)?, truncated })
}

/// Largest cascades first (ties by root id), at least `min_size`, at most
/// `top_k` of them.
pub fn select_cascades(mut trees: Vec<CascadeTree>, min_size: usize, top_k: usize) -> Vec<CascadeTree> {
    trees.retain(|t| t.size() >= min_size);
    trees.sort_by(|a, b| b.size().cmp(&a.size()).then_with(|| a.root_id.cmp(&b.root_id)));
    trees.truncate(top_k);
    trees
}

/// On-disk representation of one cascade.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeFile {
    pub root_id: String,
    pub events: Vec<TweetEvent>,
    pub series: ActivitySeries,
}

impl CascadeFile {
    pub fn new(tree: &CascadeTree, series: ActivitySeries) -> Self {
        CascadeFile { root_id: tree.root_id.clone(), events: tree.events_sorted(), series }
    }

    pub fn size(&self) -> usize {
        self.events.len().saturating_sub(1)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("cascade file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CascadeFile = serde_json::from_str(s)?;
        file.series.validate()?;
        for e in &file.events {
            e.validate()?;
        }
        Ok(file)
    }

    /// Rebuild the tree; the events must form exactly one cascade rooted at
    /// `root_id`.
    pub fn tree(&self) -> Result<CascadeTree> {
        let built = build_cascades(&self.events);
        match (built.trees.as_slice(), built.orphans.is_empty()) {
            ([tree], true) if tree.root_id == self.root_id => Ok(tree.clone()),
            _ => Err(Error::invalid(format!(
                "cascade file for {} does not describe a single rooted tree",
                self.root_id
            ))),
        }
    }
}

/// Distinct node ids that have at least one child.
pub fn parent_set(tree: &CascadeTree) -> BTreeSet<&str> {
    tree.nodes.values().filter_map(|n| n.parent.as_deref()).collect()
}
