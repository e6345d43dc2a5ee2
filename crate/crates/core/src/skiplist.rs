//! Lazy skip list. Only the data layer (level 0) is bundled; the index
//! layers are plain links used to speed up searches.

use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, Ordering};

use crossbeam_utils::Backoff;

use crate::bundle::{Bundle, Timestamp};
use crate::context::Context;
use crate::hooks::{Hooks, POISON};
use crate::latch::Latch;
use crate::reclaim::{Freed, Prune};
use crate::rq::{self, First, ScanStats, SnapshotScan};
use crate::set::{
    check_key, BundleCensus, Config, InvariantViolation, Key, OrderedSet, Stats, Value,
};
use crate::update::{linearize_update, LinPoint, PreparedUpdate, UpdatePlan};

/// Number of levels, so the highest level index is `MAX_LEVEL - 1`.
pub const MAX_LEVEL: usize = 20;

pub(crate) struct Node {
    key: Key,
    val: AtomicU64,
    next: Box<[AtomicPtr<Node>]>,
    bundle: Bundle<Node>,
    deleted: AtomicBool,
    fully_linked: AtomicBool,
    latch: Latch,
}

impl Node {
    fn alloc(key: Key, val: Value, succs: &[*mut Node], bundle: Bundle<Node>) -> *mut Node {
        Box::into_raw(Box::new(Node {
            key,
            val: AtomicU64::new(val),
            next: succs.iter().map(|&s| AtomicPtr::new(s)).collect(),
            bundle,
            deleted: AtomicBool::new(false),
            fully_linked: AtomicBool::new(false),
            latch: Latch::new(),
        }))
    }

    fn top(&self) -> usize {
        self.next.len() - 1
    }

    fn next(&self, level: usize) -> *mut Node {
        self.next[level].load(Ordering::Acquire)
    }
}

unsafe fn free_node(p: *mut u8, poison: bool) -> Freed {
    let node = p.cast::<Node>();
    if poison {
        (*node).val.store(POISON, Ordering::Relaxed);
        return Freed {
            nodes: 1,
            entries: 0,
        };
    }
    let entries = (*node).bundle.free_entries();
    drop(Box::from_raw(node));
    Freed { nodes: 1, entries }
}

fn random_top() -> usize {
    (rand::random::<u32>().trailing_ones() as usize).min(MAX_LEVEL - 1)
}

struct Search {
    found: Option<usize>,
    preds: [*mut Node; MAX_LEVEL],
    succs: [*mut Node; MAX_LEVEL],
}

/// Locks `preds[0..=top]` bottom-up, skipping repeats, and unlocks on drop.
struct PredLocks<'a> {
    preds: &'a [*mut Node],
    locked: usize,
}

impl<'a> PredLocks<'a> {
    fn lock(preds: &'a [*mut Node], top: usize) -> Self {
        let mut held = PredLocks { preds, locked: 0 };
        for l in 0..=top {
            if l == 0 || preds[l] != preds[l - 1] {
                // SAFETY: preds come from a search under a guard.
                unsafe { (*preds[l]).latch.lock() };
            }
            held.locked = l + 1;
        }
        held
    }
}

impl Drop for PredLocks<'_> {
    fn drop(&mut self) {
        for l in (0..self.locked).rev() {
            if l == 0 || self.preds[l] != self.preds[l - 1] {
                // SAFETY: locked in `lock`.
                unsafe { (*self.preds[l]).latch.unlock() };
            }
        }
    }
}

/// A sorted set backed by a lazy skip list.
pub struct BundledSkipList {
    head: *mut Node,
    ctx: Context,
}

// SAFETY: all shared node state is atomic or latch-protected.
unsafe impl Send for BundledSkipList {}
unsafe impl Sync for BundledSkipList {}

impl Default for BundledSkipList {
    fn default() -> Self {
        Self::new()
    }
}

impl BundledSkipList {
    pub fn new() -> Self {
        Self::with_config(Config::default())
    }

    fn search(&self, key: Key) -> Search {
        let mut s = Search {
            found: None,
            preds: [ptr::null_mut(); MAX_LEVEL],
            succs: [ptr::null_mut(); MAX_LEVEL],
        };
        let mut pred = self.head;
        for l in (0..MAX_LEVEL).rev() {
            // SAFETY: caller holds a guard.
            unsafe {
                let mut curr = (*pred).next(l);
                while (*curr).key < key {
                    pred = curr;
                    curr = (*curr).next(l);
                }
                if s.found.is_none() && (*curr).key == key {
                    s.found = Some(l);
                }
                s.preds[l] = pred;
                s.succs[l] = curr;
            }
        }
        s
    }

    /// Level-0 walk over user nodes through newest links.
    fn nodes(&self) -> impl Iterator<Item = &Node> {
        // SAFETY: head is a live sentinel; callers hold a guard.
        let mut cur = unsafe { (*self.head).next(0) };
        std::iter::from_fn(move || {
            let node = unsafe { &*cur };
            if node.key == Key::MAX {
                return None;
            }
            cur = node.next(0);
            Some(node)
        })
    }

    fn head(&self) -> &Node {
        // SAFETY: sentinel lives as long as the list.
        unsafe { &*self.head }
    }
}

pub(crate) struct Cursor {
    pending: *mut Node,
}

impl SnapshotScan for BundledSkipList {
    type Node = Node;
    type Cursor = Cursor;

    fn first_in_range(&self, low: Key, high: Key, ts: Timestamp, from_start: bool) -> First<Node> {
        let mut pred = self.head;
        if !from_start {
            for l in (0..MAX_LEVEL).rev() {
                // SAFETY: guard held by the driver.
                unsafe {
                    let mut curr = (*pred).next(l);
                    while (*curr).key < low {
                        pred = curr;
                        curr = (*curr).next(l);
                    }
                }
            }
        }
        loop {
            // SAFETY: as above.
            let Some(next) = (unsafe { &*pred }).bundle.dereference(ts, &self.ctx) else {
                return First::Restart;
            };
            let key = unsafe { (*next).key };
            if key >= low {
                return if key > high {
                    First::Empty
                } else {
                    First::Found(next)
                };
            }
            pred = next;
        }
    }

    fn start_scan(&self, first: *mut Node, _low: Key, _high: Key, _ts: Timestamp) -> Cursor {
        Cursor { pending: first }
    }

    fn get_next(
        &self,
        cursor: &mut Cursor,
        _low: Key,
        high: Key,
        ts: Timestamp,
        stats: &mut ScanStats,
    ) -> Option<*mut Node> {
        if cursor.pending.is_null() {
            return None;
        }
        let node = cursor.pending;
        stats.in_range += 1;
        // SAFETY: guard held by the driver.
        let succ = unsafe { &*node }
            .bundle
            .dereference(ts, &self.ctx)
            .expect("bundle of a node on the snapshot path has no entry for the snapshot");
        if unsafe { (*succ).key } > high {
            stats.out_of_range += 1;
            cursor.pending = ptr::null_mut();
        } else {
            cursor.pending = succ;
        }
        Some(node)
    }

    unsafe fn key_value(node: *mut Node) -> (Key, Value) {
        ((*node).key, (*node).val.load(Ordering::Relaxed))
    }

    fn context(&self) -> &Context {
        &self.ctx
    }
}

impl Prune for BundledSkipList {
    fn prune_pass(&self) -> usize {
        let min = self.ctx.rqs.min_active(&self.ctx.clock);
        self.prune_bundles(min)
    }
}

impl OrderedSet for BundledSkipList {
    fn with_config(cfg: Config) -> Self {
        let ctx = Context::new(&cfg);
        let tail = Node::alloc(Key::MAX, 0, &[ptr::null_mut(); MAX_LEVEL], Bundle::new());
        let head = Node::alloc(0, 0, &[tail; MAX_LEVEL], Bundle::with_entry(tail, 0, &ctx));
        // SAFETY: freshly allocated.
        unsafe {
            (*tail).fully_linked.store(true, Ordering::Relaxed);
            (*head).fully_linked.store(true, Ordering::Relaxed);
        }
        BundledSkipList { head, ctx }
    }

    fn name(&self) -> &'static str {
        "skiplist"
    }

    fn insert(&self, key: Key, val: Value) -> bool {
        check_key(key);
        let _guard = self.ctx.pin();
        let top = match self.ctx.hooks.forced_top() {
            Some(t) => t.min(MAX_LEVEL - 1),
            None => random_top(),
        };
        loop {
            let s = self.search(key);
            if let Some(l) = s.found {
                // SAFETY: guard held.
                let found = unsafe { &*s.succs[l] };
                if !found.deleted.load(Ordering::Acquire) {
                    let backoff = Backoff::new();
                    while !found.fully_linked.load(Ordering::Acquire) {
                        backoff.snooze();
                    }
                    return false;
                }
                continue;
            }
            let locks = PredLocks::lock(&s.preds, top);
            let valid = (0..=top).all(|l| unsafe {
                let (pred, succ) = (&*s.preds[l], &*s.succs[l]);
                !pred.deleted.load(Ordering::Acquire)
                    && !succ.deleted.load(Ordering::Acquire)
                    && pred.next(l) == s.succs[l]
            });
            if !valid {
                drop(locks);
                continue;
            }
            let node = Node::alloc(key, val, &s.succs[..=top], Bundle::new());
            // SAFETY: `node` is ours until linked; preds are latched.
            let (new, pred0) = unsafe { (&*node, &*s.preds[0]) };
            let plan: UpdatePlan<'_, Node> = [(&new.bundle, s.succs[0]), (&pred0.bundle, node)]
                .into_iter()
                .collect();
            let prepared = PreparedUpdate::prepare(plan, &self.ctx);
            for l in 0..=top {
                unsafe { (*s.preds[l]).next[l].store(node, Ordering::Release) };
            }
            prepared.commit(LinPoint::Flag(&new.fully_linked));
            drop(locks);
            return true;
        }
    }

    fn remove(&self, key: Key) -> bool {
        check_key(key);
        let guard = self.ctx.pin();
        let mut victim: Option<&Node> = None;
        loop {
            let s = self.search(key);
            let v = match victim {
                Some(v) => v,
                None => {
                    let Some(l) = s.found else { return false };
                    // SAFETY: guard held.
                    let v = unsafe { &*s.succs[l] };
                    let deletable = v.fully_linked.load(Ordering::Acquire)
                        && v.top() == l
                        && !v.deleted.load(Ordering::Acquire);
                    if !deletable {
                        return false;
                    }
                    v.latch.lock();
                    if v.deleted.load(Ordering::Acquire) {
                        // SAFETY: locked above.
                        unsafe { v.latch.unlock() };
                        return false;
                    }
                    victim = Some(v);
                    v
                }
            };
            let top = v.top();
            let locks = PredLocks::lock(&s.preds, top);
            let valid = (0..=top).all(|l| unsafe {
                let pred = &*s.preds[l];
                !pred.deleted.load(Ordering::Acquire) && ptr::eq(pred.next(l), v)
            });
            if !valid {
                drop(locks);
                continue;
            }
            // SAFETY: pred 0 is latched.
            let pred0 = unsafe { &*s.preds[0] };
            let plan: UpdatePlan<'_, Node> = [(&pred0.bundle, v.next(0))].into_iter().collect();
            linearize_update(plan, LinPoint::Flag(&v.deleted), &self.ctx);
            for l in (0..=top).rev() {
                unsafe { (*s.preds[l]).next[l].store(v.next(l), Ordering::Release) };
            }
            drop(locks);
            // SAFETY: locked when chosen as victim.
            unsafe { v.latch.unlock() };
            guard.retire(v as *const Node as *mut u8, free_node);
            self.ctx.count_retired_node();
            return true;
        }
    }

    fn contains(&self, key: Key) -> bool {
        check_key(key);
        let _guard = self.ctx.pin();
        let s = self.search(key);
        s.found.is_some_and(|l| {
            // SAFETY: guard held.
            let n = unsafe { &*s.succs[l] };
            n.fully_linked.load(Ordering::Acquire) && !n.deleted.load(Ordering::Acquire)
        })
    }

    fn range_query_with_stats(&self, low: Key, high: Key) -> (Vec<(Key, Value)>, ScanStats) {
        let mut stats = ScanStats::default();
        let out = rq::range_query(self, low, high, &mut stats);
        (out, stats)
    }

    fn range_query_unsafe(&self, low: Key, high: Key) -> Vec<(Key, Value)> {
        let Some((low, high)) = rq::clamp(low, high) else {
            return Vec::new();
        };
        let _guard = self.ctx.pin();
        let s = self.search(low);
        let mut out = Vec::new();
        let mut cur = s.succs[0];
        // SAFETY: guard held.
        while unsafe { (*cur).key } <= high {
            let n = unsafe { &*cur };
            if n.fully_linked.load(Ordering::Acquire) && !n.deleted.load(Ordering::Acquire) {
                out.push((n.key, n.val.load(Ordering::Relaxed)));
            }
            cur = n.next(0);
        }
        out
    }

    fn snapshot_at(&self, low: Key, high: Key, ts: Timestamp) -> Vec<(Key, Value)> {
        rq::snapshot_at(self, low, high, ts)
    }

    fn clock(&self) -> Timestamp {
        self.ctx.clock.read()
    }

    fn prune_bundles(&self, min_active: Timestamp) -> usize {
        let guard = self.ctx.pin();
        let mut pruned = 0;
        for node in std::iter::once(self.head()).chain(self.nodes()) {
            node.latch.lock();
            pruned += node.bundle.prune(min_active, &guard);
            // SAFETY: locked above.
            unsafe { node.latch.unlock() };
        }
        pruned
    }

    fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let _guard = self.ctx.pin();
        let strict = self.ctx.policy.is_strict();
        let now = self.ctx.clock.read();
        let mut prev = 0;
        for node in std::iter::once(self.head()).chain(self.nodes()) {
            if node.key != 0 && node.key <= prev {
                return Err(InvariantViolation::Order {
                    prev,
                    next: node.key,
                });
            }
            if node.deleted.load(Ordering::Acquire) {
                return Err(InvariantViolation::DeletedReachable { key: node.key });
            }
            if !node.fully_linked.load(Ordering::Acquire) {
                return Err(InvariantViolation::Shape(format!(
                    "node {} reachable but not fully linked",
                    node.key
                )));
            }
            node.bundle
                .check(node.next(0), strict, now)
                .map_err(|detail| InvariantViolation::Bundle {
                    key: node.key,
                    detail,
                })?;
            prev = node.key;
        }
        // Every index level must be a sorted sub-sequence of level 0.
        for l in 1..MAX_LEVEL {
            let mut base = self.head().next(0);
            let mut cur = self.head().next(l);
            // SAFETY: guard held.
            while unsafe { (*cur).key } != Key::MAX {
                while base != cur && unsafe { (*base).key } != Key::MAX {
                    base = unsafe { (*base).next(0) };
                }
                if base != cur {
                    return Err(InvariantViolation::Shape(format!(
                        "level {l} node {} missing from level 0",
                        unsafe { (*cur).key }
                    )));
                }
                cur = unsafe { (*cur).next(l) };
            }
        }
        Ok(())
    }

    fn len(&self) -> usize {
        let _guard = self.ctx.pin();
        self.nodes()
            .filter(|n| !n.deleted.load(Ordering::Acquire))
            .count()
    }

    fn bundle_census(&self) -> BundleCensus {
        let _guard = self.ctx.pin();
        let mut census = BundleCensus::default();
        for node in std::iter::once(self.head()).chain(self.nodes()) {
            census.add(&node.bundle);
        }
        census
    }

    fn flush_reclaim(&self) {
        self.ctx.flush_reclaim();
    }

    fn stats(&self) -> Stats {
        self.ctx.stats()
    }

    fn config(&self) -> Config {
        self.ctx.config
    }

    fn hooks(&self) -> &Hooks {
        &self.ctx.hooks
    }
}

impl Drop for BundledSkipList {
    fn drop(&mut self) {
        let mut cur = self.head;
        while !cur.is_null() {
            // SAFETY: exclusive access; only level-0-reachable nodes are
            // owned by the list.
            unsafe {
                let next = (*cur).next[0].load(Ordering::Relaxed);
                free_node(cur.cast(), false);
                cur = next;
            }
        }
    }
}
