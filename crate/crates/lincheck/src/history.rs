//! Recording concurrent histories of ordered-set operations.

use std::sync::atomic::{AtomicU64, Ordering};

use bundled_refs::{Key, OrderedSet, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Insert(Key, Value),
    Remove(Key),
    Contains(Key),
    Range(Key, Key),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ret {
    Bool(bool),
    Pairs(Vec<(Key, Value)>),
}

/// One completed operation. `invoke < response`; both come from one
/// process-wide counter, so stamps of different events are comparable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub thread: usize,
    pub op: Op,
    pub ret: Ret,
    pub invoke: u64,
    pub response: u64,
}

static STAMP: AtomicU64 = AtomicU64::new(0);

pub fn stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::SeqCst)
}

/// Runs `op` against `set`. Range results are sorted by key so they
/// compare as sets.
pub fn apply(set: &dyn OrderedSet, op: &Op) -> Ret {
    match *op {
        Op::Insert(k, v) => Ret::Bool(set.insert(k, v)),
        Op::Remove(k) => Ret::Bool(set.remove(k)),
        Op::Contains(k) => Ret::Bool(set.contains(k)),
        Op::Range(lo, hi) => {
            let mut pairs = set.range_query(lo, hi);
            pairs.sort_unstable();
            Ret::Pairs(pairs)
        }
    }
}

/// Append-only log owned by one thread.
#[derive(Debug)]
pub struct ThreadLog {
    thread: usize,
    events: Vec<Event>,
}

impl ThreadLog {
    pub fn new(thread: usize) -> Self {
        Self {
            thread,
            events: Vec::new(),
        }
    }

    pub fn run(&mut self, set: &dyn OrderedSet, op: Op) -> Ret {
        let invoke = stamp();
        let ret = apply(set, &op);
        let response = stamp();
        self.events.push(Event {
            thread: self.thread,
            op,
            ret: ret.clone(),
            invoke,
            response,
        });
        ret
    }

    /// Records an operation whose boundaries were stamped by the caller.
    pub fn push(&mut self, op: Op, ret: Ret, invoke: u64, response: u64) {
        self.events.push(Event {
            thread: self.thread,
            op,
            ret,
            invoke,
            response,
        });
    }
}

/// Merges per-thread logs into one history ordered by invocation.
pub fn merge(logs: impl IntoIterator<Item = ThreadLog>) -> Vec<Event> {
    let mut events: Vec<Event> = logs.into_iter().flat_map(|l| l.events).collect();
    events.sort_by_key(|e| e.invoke);
    events
}
