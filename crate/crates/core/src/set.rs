//! The ordered-set interface shared by all bundled structures.

use crate::bundle::Timestamp;
use crate::clock::ClockPolicy;
use crate::hooks::Hooks;
use crate::reclaim::{Prune, ReclaimConfig};
use crate::rq::ScanStats;

pub type Key = u64;
pub type Value = u64;

/// Smallest key a caller may store. `0` is reserved for the head sentinel.
pub const MIN_KEY: Key = 1;
/// Largest key a caller may store. `u64::MAX` is reserved for sentinels.
pub const MAX_KEY: Key = u64::MAX - 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Config {
    pub reclaim: ReclaimConfig,
    pub relax: ClockPolicy,
}

/// Running totals of one structure.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Stats {
    pub clock: Timestamp,
    pub successful_updates: u64,
    /// Bundle entries ever allocated, including sentinel initialization.
    pub entries_created: u64,
    pub nodes_retired: u64,
    pub nodes_freed: u64,
    pub entries_freed: u64,
}

/// Bundle sizes over every node currently reachable through newest links.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct BundleCensus {
    pub bundles: usize,
    pub entries: usize,
    pub max_len: usize,
    pub pending: usize,
}

impl BundleCensus {
    pub(crate) fn add<N>(&mut self, b: &crate::bundle::Bundle<N>) {
        let entries = b.entries();
        self.bundles += 1;
        self.entries += entries.len();
        self.max_len = self.max_len.max(entries.len());
        self.pending += entries
            .iter()
            .filter(|(ts, _)| *ts == crate::bundle::PENDING)
            .count();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvariantViolation {
    #[error("keys out of order: {prev} followed by {next}")]
    Order { prev: Key, next: Key },
    #[error("logically deleted node {key} is still reachable")]
    DeletedReachable { key: Key },
    #[error("bundle of node {key}: {detail}")]
    Bundle { key: Key, detail: String },
    #[error("{0}")]
    Shape(String),
}

/// A concurrent ordered set of `u64` keys with linearizable range queries.
///
/// Keys must lie in `MIN_KEY..=MAX_KEY`; point operations panic otherwise.
/// Range bounds are inclusive and clamped to that interval.
pub trait OrderedSet: Prune {
    fn with_config(cfg: Config) -> Self
    where
        Self: Sized;

    fn name(&self) -> &'static str;

    /// Adds `key` with `val`. Returns false, leaving the stored value
    /// untouched, if `key` was already present.
    fn insert(&self, key: Key, val: Value) -> bool;

    fn remove(&self, key: Key) -> bool;

    fn contains(&self, key: Key) -> bool;

    /// Every pair with key in `[low, high]` at one instant, ascending.
    fn range_query(&self, low: Key, high: Key) -> Vec<(Key, Value)> {
        self.range_query_with_stats(low, high).0
    }

    fn range_query_with_stats(&self, low: Key, high: Key) -> (Vec<(Key, Value)>, ScanStats);

    /// Range query over newest links only. Not linearizable; exists as a
    /// performance baseline.
    fn range_query_unsafe(&self, low: Key, high: Key) -> Vec<(Key, Value)>;

    /// Range query over the snapshot at timestamp `ts <= clock()`. Exact
    /// as long as no pruning has happened since the clock passed `ts`.
    fn snapshot_at(&self, low: Key, high: Key, ts: Timestamp) -> Vec<(Key, Value)>;

    fn clock(&self) -> Timestamp;

    /// Prunes every reachable bundle against `min_active`. Returns the
    /// number of entries removed.
    fn prune_bundles(&self, min_active: Timestamp) -> usize;

    /// Structural and bundle invariants. Only meaningful in quiescence.
    fn check_invariants(&self) -> Result<(), InvariantViolation>;

    /// Number of keys. Only exact in quiescence.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bundle_census(&self) -> BundleCensus;

    /// Frees whatever the calling thread has retired, provided no other
    /// thread is inside an operation. No effect with reclamation disabled.
    fn flush_reclaim(&self);

    fn stats(&self) -> Stats;

    fn config(&self) -> Config;

    fn hooks(&self) -> &Hooks;
}

/// Panics unless `key` is a storable key.
#[inline]
pub(crate) fn check_key(key: Key) {
    assert!(
        (MIN_KEY..=MAX_KEY).contains(&key),
        "key {key} outside {MIN_KEY}..={MAX_KEY}"
    );
}

/// The three bundled structures, for selecting one at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetKind {
    List,
    SkipList,
    Tree,
}

impl SetKind {
    pub const ALL: [SetKind; 3] = [SetKind::List, SetKind::SkipList, SetKind::Tree];

    pub fn build(self, cfg: Config) -> std::sync::Arc<dyn OrderedSet> {
        use std::sync::Arc;
        match self {
            SetKind::List => Arc::new(crate::BundledList::with_config(cfg)),
            SetKind::SkipList => Arc::new(crate::BundledSkipList::with_config(cfg)),
            SetKind::Tree => Arc::new(crate::BundledTree::with_config(cfg)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SetKind::List => "list",
            SetKind::SkipList => "skiplist",
            SetKind::Tree => "bst",
        }
    }
}

impl std::fmt::Display for SetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown data structure {0:?}; expected list, skiplist or bst")]
pub struct UnknownSetKind(pub String);

impl std::str::FromStr for SetKind {
    type Err = UnknownSetKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "list" => Ok(SetKind::List),
            "skiplist" => Ok(SetKind::SkipList),
            "bst" | "tree" => Ok(SetKind::Tree),
            other => Err(UnknownSetKind(other.to_string())),
        }
    }
}
