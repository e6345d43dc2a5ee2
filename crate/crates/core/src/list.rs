//! Lazy sorted linked list with bundled `next` links.

use std::collections::{BTreeMap, VecDeque};
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, Ordering};

use crate::bundle::{Bundle, Timestamp};
use crate::context::Context;
use crate::hooks::{Hooks, POISON};
use crate::latch::Latch;
use crate::reclaim::{Freed, Prune};
use crate::rq::{self, First, ScanStats, SnapshotScan};
use crate::set::{
    check_key, BundleCensus, Config, InvariantViolation, Key, OrderedSet, Stats, Value,
};
use crate::update::{linearize_update, LinPoint, UpdatePlan};

pub(crate) struct Node {
    key: Key,
    val: AtomicU64,
    next: AtomicPtr<Node>,
    bundle: Bundle<Node>,
    deleted: AtomicBool,
    latch: Latch,
}

impl Node {
    fn alloc(key: Key, val: Value, next: *mut Node, bundle: Bundle<Node>) -> *mut Node {
        Box::into_raw(Box::new(Node {
            key,
            val: AtomicU64::new(val),
            next: AtomicPtr::new(next),
            bundle,
            deleted: AtomicBool::new(false),
            latch: Latch::new(),
        }))
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

/// A sorted set backed by a lazy linked list.
///
/// Inserts lock only the predecessor, removes lock predecessor and victim,
/// `contains` takes no locks. Range queries follow the `next` bundles.
pub struct BundledList {
    head: *mut Node,
    ctx: Context,
}

// SAFETY: all shared node state is atomic or latch-protected.
unsafe impl Send for BundledList {}
unsafe impl Sync for BundledList {}

impl Default for BundledList {
    fn default() -> Self {
        Self::new()
    }
}

impl BundledList {
    pub fn new() -> Self {
        Self::with_config(Config::default())
    }

    /// Newest-link predecessor and successor of `key`: `pred.key < key <=
    /// curr.key`.
    fn find(&self, key: Key) -> (&Node, &Node) {
        // SAFETY: the caller holds a guard; sentinels are never freed.
        unsafe {
            let mut pred = &*self.head;
            let mut curr = &*pred.next.load(Ordering::Acquire);
            while curr.key < key {
                pred = curr;
                curr = &*curr.next.load(Ordering::Acquire);
            }
            (pred, curr)
        }
    }

    /// Every node ever linked, with its full bundle as `(ts, target key)`,
    /// keyed by node key. Includes removed nodes, so only available while
    /// reclamation is disabled.
    ///
    /// # Panics
    /// If reclamation is enabled.
    pub fn history(&self) -> BTreeMap<Key, Vec<(Timestamp, Key)>> {
        assert!(
            !self.ctx.reclaimer.enabled(),
            "history requires reclamation to be disabled"
        );
        let mut out = BTreeMap::new();
        let mut queue = VecDeque::from([self.head]);
        while let Some(p) = queue.pop_front() {
            // SAFETY: with reclamation off nothing is freed before drop.
            let node = unsafe { &*p };
            if out.contains_key(&node.key) || node.key == Key::MAX {
                continue;
            }
            let entries: Vec<_> = node
                .bundle
                .entries()
                .into_iter()
                .map(|(ts, t)| (ts, unsafe { (*t).key }))
                .collect();
            for (_, t) in node.bundle.entries() {
                queue.push_back(t);
            }
            out.insert(node.key, entries);
        }
        out
    }

    fn nodes(&self) -> NodeIter<'_> {
        // SAFETY: head is a live sentinel.
        NodeIter {
            next: unsafe { (*self.head).next.load(Ordering::Acquire) },
            _list: self,
        }
    }
}

/// Newest-link walk over the user nodes.
struct NodeIter<'a> {
    next: *mut Node,
    _list: &'a BundledList,
}

impl<'a> Iterator for NodeIter<'a> {
    type Item = &'a Node;

    fn next(&mut self) -> Option<&'a Node> {
        // SAFETY: callers hold a guard or have exclusive access.
        let node = unsafe { &*self.next };
        if node.key == Key::MAX {
            return None;
        }
        self.next = node.next.load(Ordering::Acquire);
        Some(node)
    }
}

pub(crate) struct Cursor {
    pending: *mut Node,
}

impl SnapshotScan for BundledList {
    type Node = Node;
    type Cursor = Cursor;

    fn first_in_range(&self, low: Key, high: Key, ts: Timestamp, from_start: bool) -> First<Node> {
        let mut pred = self.head;
        if !from_start {
            // SAFETY: guard held by the driver.
            unsafe {
                let mut curr = (*pred).next.load(Ordering::Acquire);
                while (*curr).key < low {
                    pred = curr;
                    curr = (*curr).next.load(Ordering::Acquire);
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

impl Prune for BundledList {
    fn prune_pass(&self) -> usize {
        let min = self.ctx.rqs.min_active(&self.ctx.clock);
        self.prune_bundles(min)
    }
}

impl OrderedSet for BundledList {
    fn with_config(cfg: Config) -> Self {
        let ctx = Context::new(&cfg);
        let tail = Node::alloc(Key::MAX, 0, ptr::null_mut(), Bundle::new());
        let head = Node::alloc(0, 0, tail, Bundle::with_entry(tail, 0, &ctx));
        BundledList { head, ctx }
    }

    fn name(&self) -> &'static str {
        "list"
    }

    fn insert(&self, key: Key, val: Value) -> bool {
        check_key(key);
        let _guard = self.ctx.pin();
        loop {
            let (pred, curr) = self.find(key);
            pred.latch.lock();
            let valid = !pred.deleted.load(Ordering::Acquire)
                && !curr.deleted.load(Ordering::Acquire)
                && ptr::eq(pred.next.load(Ordering::Acquire), curr);
            if !valid {
                // SAFETY: locked above.
                unsafe { pred.latch.unlock() };
                continue;
            }
            if curr.key == key {
                unsafe { pred.latch.unlock() };
                return false;
            }
            let curr_ptr = curr as *const Node as *mut Node;
            let node = Node::alloc(key, val, curr_ptr, Bundle::new());
            // SAFETY: not yet shared.
            let new_bundle = unsafe { &(*node).bundle };
            let plan: UpdatePlan<'_, Node> = [(new_bundle, curr_ptr), (&pred.bundle, node)]
                .into_iter()
                .collect();
            linearize_update(plan, LinPoint::Link(&pred.next, node), &self.ctx);
            unsafe { pred.latch.unlock() };
            return true;
        }
    }

    fn remove(&self, key: Key) -> bool {
        check_key(key);
        let guard = self.ctx.pin();
        loop {
            let (pred, curr) = self.find(key);
            if curr.key != key || curr.deleted.load(Ordering::Acquire) {
                return false;
            }
            pred.latch.lock();
            curr.latch.lock();
            let valid = !pred.deleted.load(Ordering::Acquire)
                && !curr.deleted.load(Ordering::Acquire)
                && ptr::eq(pred.next.load(Ordering::Acquire), curr);
            if !valid {
                // SAFETY: both locked above.
                unsafe {
                    curr.latch.unlock();
                    pred.latch.unlock();
                }
                continue;
            }
            let succ = curr.next.load(Ordering::Acquire);
            let plan: UpdatePlan<'_, Node> = [(&pred.bundle, succ)].into_iter().collect();
            linearize_update(plan, LinPoint::Flag(&curr.deleted), &self.ctx);
            pred.next.store(succ, Ordering::Release);
            unsafe {
                curr.latch.unlock();
                pred.latch.unlock();
            }
            guard.retire(curr as *const Node as *mut u8, free_node);
            self.ctx.count_retired_node();
            return true;
        }
    }

    fn contains(&self, key: Key) -> bool {
        check_key(key);
        let _guard = self.ctx.pin();
        let (_, curr) = self.find(key);
        curr.key == key && !curr.deleted.load(Ordering::Acquire)
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
        let (_, mut curr) = self.find(low);
        let mut out = Vec::new();
        while curr.key <= high {
            if !curr.deleted.load(Ordering::Acquire) {
                out.push((curr.key, curr.val.load(Ordering::Relaxed)));
            }
            // SAFETY: guard held.
            curr = unsafe { &*curr.next.load(Ordering::Acquire) };
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
        // SAFETY: head is a live sentinel.
        let head = unsafe { &*self.head };
        let mut pruned = 0;
        for node in std::iter::once(head).chain(self.nodes()) {
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
        // SAFETY: head is a live sentinel.
        let head = unsafe { &*self.head };
        let mut prev = head.key;
        for node in std::iter::once(head).chain(self.nodes()) {
            if !ptr::eq(node, head) && node.key <= prev {
                return Err(InvariantViolation::Order {
                    prev,
                    next: node.key,
                });
            }
            if node.deleted.load(Ordering::Acquire) {
                return Err(InvariantViolation::DeletedReachable { key: node.key });
            }
            node.bundle
                .check(node.next.load(Ordering::Acquire), strict, now)
                .map_err(|detail| InvariantViolation::Bundle {
                    key: node.key,
                    detail,
                })?;
            prev = node.key;
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
        // SAFETY: head is a live sentinel.
        let head = unsafe { &*self.head };
        for node in std::iter::once(head).chain(self.nodes()) {
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

impl Drop for BundledList {
    fn drop(&mut self) {
        let mut cur = self.head;
        while !cur.is_null() {
            // SAFETY: exclusive access; removed nodes are owned by the
            // reclaimer, reachable ones only by the list.
            unsafe {
                let next = (*cur).next.load(Ordering::Relaxed);
                free_node(cur.cast(), false);
                cur = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The four-update example: insert 20, 30, 10, then remove 20.
    fn example() -> BundledList {
        let l = BundledList::new();
        assert!(l.insert(20, 200));
        assert!(l.insert(30, 300));
        assert!(l.insert(10, 100));
        assert!(l.remove(20));
        l
    }

    const TAIL: Key = Key::MAX;

    #[test]
    fn worked_example_bundles() {
        let l = example();
        assert_eq!(l.clock(), 4);
        let h = l.history();
        assert_eq!(h[&0], vec![(3, 10), (1, 20), (0, TAIL)]);
        assert_eq!(h[&10], vec![(4, 30), (3, 20)]);
        assert_eq!(h[&20], vec![(2, 30), (1, TAIL)]);
        assert_eq!(h[&30], vec![(2, TAIL)]);
        l.check_invariants().unwrap();
    }

    #[test]
    fn example_snapshots_at_every_timestamp() {
        let l = example();
        let keys = |ts| -> Vec<Key> {
            l.snapshot_at(1, 100, ts)
                .into_iter()
                .map(|(k, _)| k)
                .collect()
        };
        assert_eq!(keys(0), Vec::<Key>::new());
        assert_eq!(keys(1), vec![20]);
        assert_eq!(keys(2), vec![20, 30]);
        assert_eq!(keys(3), vec![10, 20, 30]);
        assert_eq!(keys(4), vec![10, 30]);
        assert_eq!(l.range_query(10, 30), vec![(10, 100), (30, 300)]);
    }

    #[test]
    fn example_first_node_and_get_next() {
        let l = example();
        let _g = l.ctx.pin();
        let key = |f: First<Node>| match f {
            First::Found(n) => Some(unsafe { (*n).key }),
            First::Empty => None,
            First::Restart => panic!("unexpected restart"),
        };
        assert_eq!(key(l.first_in_range(15, 35, 3, false)), Some(20));
        assert_eq!(key(l.first_in_range(15, 35, 4, false)), Some(30));
        assert_eq!(key(l.first_in_range(40, 50, 4, false)), None);

        let First::Found(n10) = l.first_in_range(10, 35, 4, false) else {
            panic!()
        };
        let mut stats = ScanStats::default();
        let walk = |ts| {
            let mut c = l.start_scan(n10, 10, 35, ts);
            let mut stats = ScanStats::default();
            std::iter::from_fn(|| l.get_next(&mut c, 10, 35, ts, &mut stats))
                .map(|n| unsafe { (*n).key })
                .collect::<Vec<_>>()
        };
        assert_eq!(walk(4), vec![10, 30]);
        assert_eq!(walk(3), vec![10, 20, 30]);
        let mut c = l.start_scan(n10, 10, 35, 4);
        while l.get_next(&mut c, 10, 35, 4, &mut stats).is_some() {}
        assert_eq!(stats.in_range, 2);
        assert_eq!(stats.out_of_range, 1);
    }

    #[test]
    fn point_operations() {
        let l = example();
        assert!(!l.contains(20));
        assert!(l.contains(10));
        assert!(!l.remove(20));
        assert!(!l.insert(10, 999));
        assert_eq!(l.range_query(10, 10), vec![(10, 100)]);
        assert!(!BundledList::new().contains(5));
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn insert_only_space_is_two_per_key_plus_one() {
        let l = BundledList::new();
        for k in (1..=500).rev() {
            assert!(l.insert(k * 7 % 1009 + 1, k));
        }
        assert_eq!(l.stats().entries_created, 2 * 500 + 1);
        assert_eq!(l.bundle_census().entries, 2 * 500 + 1);
    }

    #[test]
    fn prune_keeps_only_current_entries_when_idle() {
        let l = example();
        assert_eq!(l.prune_pass(), 3);
        let census = l.bundle_census();
        assert_eq!(census.max_len, 1);
        assert_eq!(l.range_query(1, 100), vec![(10, 100), (30, 300)]);
        l.check_invariants().unwrap();
    }

    #[test]
    fn empty_and_inverted_ranges() {
        let l = BundledList::new();
        assert!(l.range_query(1, 100).is_empty());
        let l = example();
        assert!(l.range_query(31, 20).is_empty());
        assert_eq!(l.range_query(0, u64::MAX), vec![(10, 100), (30, 300)]);
    }

    #[test]
    #[should_panic]
    fn sentinel_key_rejected() {
        BundledList::new().insert(0, 0);
    }

    #[test]
    fn unsafe_query_matches_in_quiescence() {
        let l = example();
        assert_eq!(l.range_query_unsafe(1, 100), l.range_query(1, 100));
    }
}
