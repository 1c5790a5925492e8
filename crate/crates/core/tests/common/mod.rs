//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cascadefit::cascade::{Action, Timestamp, TweetEvent};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn event(id: &str, action: Action, parent: Option<&str>, ts: i64) -> TweetEvent {
    TweetEvent {
        id: id.to_string(),
        user_id: format!("user-{id}"),
        ts: Timestamp(1_600_000_000 + ts),
        action,
        parent_id: parent.map(str::to_string),
    }
}

/// A random log with unique ids, some roots, and parent links that may
/// point forwards, form cycles or name ids that do not exist.
pub fn random_log<R: Rng>(rng: &mut R, max_events: usize) -> Vec<TweetEvent> {
    let n = rng.gen_range(1..=max_events);
    let ids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let actions = [Action::Retweet, Action::Quote, Action::Reply];
    let mut log: Vec<TweetEvent> = (0..n)
        .map(|i| {
            let ts = rng.gen_range(0..50_000);
            if rng.gen_bool(0.15) {
                event(&ids[i], Action::Root, None, ts)
            } else {
                let parent = if rng.gen_bool(0.9) { ids[rng.gen_range(0..n)].clone() } else { format!("ghost{}", rng.gen_range(0..3)) };
                event(&ids[i], *actions.choose(rng).unwrap(), Some(&parent), ts)
            }
        })
        .collect();
    log.shuffle(rng);
    log
}

/// Independent reachability oracle: walk each event's parent chain for at
/// most `len` steps. Returns root id -> member ids (root excluded), orphans.
pub fn reachability_oracle(log: &[TweetEvent]) -> (BTreeMap<String, BTreeSet<String>>, BTreeSet<String>) {
    let by_id: BTreeMap<&str, &TweetEvent> = log.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut trees: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut orphans = BTreeSet::new();
    for e in log {
        if e.action == Action::Root {
            trees.entry(e.id.clone()).or_default();
            continue;
        }
        let mut cur = e;
        let mut root = None;
        for _ in 0..=log.len() {
            let Some(parent) = cur.parent_id.as_deref().and_then(|p| by_id.get(p)) else { break };
            if parent.action == Action::Root {
                root = Some(parent.id.clone());
                break;
            }
            cur = parent;
        }
        match root {
            Some(r) => {
                trees.entry(r).or_default().insert(e.id.clone());
            }
            None => {
                orphans.insert(e.id.clone());
            }
        }
    }
    (trees, orphans)
}
