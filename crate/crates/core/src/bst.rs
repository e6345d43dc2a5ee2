//! Unbalanced internal binary search tree with fine-grained locking,
//! in the style of Citrus: removal of a node with two children installs a
//! fresh copy of its successor and unlinks the old successor only after
//! every concurrent traversal has left its read section.

use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU32, AtomicU64, Ordering};

use arrayvec::ArrayVec;

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

const LEFT: usize = 0;
const RIGHT: usize = 1;

pub(crate) struct Node {
    key: Key,
    val: AtomicU64,
    child: [AtomicPtr<Node>; 2],
    tag: [AtomicU32; 2],
    bundle: [Bundle<Node>; 2],
    deleted: AtomicBool,
    latch: Latch,
}

impl Node {
    fn alloc(
        key: Key,
        val: Value,
        children: [*mut Node; 2],
        bundles: [Bundle<Node>; 2],
    ) -> *mut Node {
        Box::into_raw(Box::new(Node {
            key,
            val: AtomicU64::new(val),
            child: children.map(AtomicPtr::new),
            tag: [AtomicU32::new(0), AtomicU32::new(0)],
            bundle: bundles,
            deleted: AtomicBool::new(false),
            latch: Latch::new(),
        }))
    }

    fn child(&self, dir: usize) -> *mut Node {
        self.child[dir].load(Ordering::Acquire)
    }

    /// Writes a child link and bumps its tag. Caller holds the latch.
    fn set_child(&self, dir: usize, to: *mut Node) {
        self.child[dir].store(to, Ordering::Release);
        self.bump_tag(dir);
    }

    fn bump_tag(&self, dir: usize) {
        self.tag[dir].fetch_add(1, Ordering::Release);
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
    let entries = (*node).bundle[0].free_entries() + (*node).bundle[1].free_entries();
    drop(Box::from_raw(node));
    Freed { nodes: 1, entries }
}

struct Found {
    prev: *mut Node,
    curr: *mut Node,
    dir: usize,
    tag: u32,
}

/// A sorted set backed by an unbalanced internal BST.
///
/// The root is a sentinel with key `u64::MAX`; the tree proper is its left
/// subtree.
pub struct BundledTree {
    root: *mut Node,
    ctx: Context,
}

// SAFETY: all shared node state is atomic or latch-protected.
unsafe impl Send for BundledTree {}
unsafe impl Sync for BundledTree {}

impl Default for BundledTree {
    fn default() -> Self {
        Self::new()
    }
}

impl BundledTree {
    pub fn new() -> Self {
        Self::with_config(Config::default())
    }

    /// Descends from the root through newest links. Must run inside a read
    /// section.
    fn find(&self, key: Key) -> Found {
        // SAFETY: caller holds a guard.
        unsafe {
            let mut prev = self.root;
            let mut dir = LEFT;
            let mut tag = (*prev).tag[dir].load(Ordering::Acquire);
            let mut curr = (*prev).child(dir);
            while !curr.is_null() && (*curr).key != key {
                prev = curr;
                dir = if key > (*curr).key { RIGHT } else { LEFT };
                tag = (*curr).tag[dir].load(Ordering::Acquire);
                curr = (*curr).child(dir);
            }
            Found {
                prev,
                curr,
                dir,
                tag,
            }
        }
    }

    fn root(&self) -> &Node {
        // SAFETY: sentinel lives as long as the tree.
        unsafe { &*self.root }
    }

    /// Pre-order walk over user nodes through newest links.
    fn nodes(&self) -> impl Iterator<Item = &Node> {
        let mut stack = vec![self.root().child(LEFT)];
        std::iter::from_fn(move || loop {
            let p = stack.pop()?;
            if p.is_null() {
                continue;
            }
            // SAFETY: callers hold a guard or have exclusive access.
            let n = unsafe { &*p };
            stack.push(n.child(RIGHT));
            stack.push(n.child(LEFT));
            return Some(n);
        })
    }

    fn remove_with_two_children(
        &self,
        prev: &Node,
        curr: &Node,
        dir: usize,
    ) -> Option<[*mut u8; 2]> {
        let right = curr.child(RIGHT);
        let (s_parent, s) = {
            let _section = self.ctx.reclaimer.read_section();
            let mut s_parent = curr as *const Node as *mut Node;
            let mut s = right;
            // SAFETY: guard held.
            unsafe {
                loop {
                    let next = (*s).child(LEFT);
                    if next.is_null() {
                        break;
                    }
                    s_parent = s;
                    s = next;
                }
                (&*s_parent, &*s)
            }
        };
        let parent_is_curr = ptr::eq(s_parent, curr);
        if !parent_is_curr {
            s_parent.latch.lock();
        }
        s.latch.lock();
        let valid = !s.deleted.load(Ordering::Acquire)
            && s.child(LEFT).is_null()
            && if parent_is_curr {
                ptr::eq(curr.child(RIGHT), s)
            } else {
                !s_parent.deleted.load(Ordering::Acquire) && ptr::eq(s_parent.child(LEFT), s)
            };
        let unlock_succ = || unsafe {
            s.latch.unlock();
            if !parent_is_curr {
                s_parent.latch.unlock();
            }
        };
        if !valid {
            unlock_succ();
            return None;
        }
        let s_right = s.child(RIGHT);
        let copy_ptr = Node::alloc(
            s.key,
            s.val.load(Ordering::Relaxed),
            [curr.child(LEFT), right],
            [Bundle::new(), Bundle::new()],
        );
        // SAFETY: not yet shared.
        let copy = unsafe { &*copy_ptr };
        copy.latch.lock();
        curr.deleted.store(true, Ordering::Release);

        let s_ptr = s as *const Node as *mut Node;
        let mut plan: UpdatePlan<'_, Node> = ArrayVec::new();
        plan.push((&prev.bundle[dir], copy_ptr));
        plan.push((&copy.bundle[LEFT], curr.child(LEFT)));
        plan.push((
            &copy.bundle[RIGHT],
            if parent_is_curr { s_right } else { right },
        ));
        if !parent_is_curr {
            plan.push((&s_parent.bundle[LEFT], s_right));
        }
        linearize_update(plan, LinPoint::Link(&prev.child[dir], copy_ptr), &self.ctx);
        prev.bump_tag(dir);

        // Traversals that passed `prev` before the new link may still be
        // heading for `s`; let them finish before unlinking it.
        self.ctx.reclaimer.synchronize();
        s.deleted.store(true, Ordering::Release);
        if parent_is_curr {
            copy.set_child(RIGHT, s_right);
        } else {
            s_parent.set_child(LEFT, s_right);
        }
        // SAFETY: `copy` was locked above.
        unsafe { copy.latch.unlock() };
        unlock_succ();
        Some([curr as *const Node as *mut u8, s_ptr.cast()])
    }
}

pub(crate) struct Cursor {
    stack: Vec<*mut Node>,
}

impl BundledTree {
    fn snapshot_child(&self, node: &Node, dir: usize, ts: Timestamp) -> *mut Node {
        node.bundle[dir]
            .dereference(ts, &self.ctx)
            .expect("bundle of a node on the snapshot path has no entry for the snapshot")
    }
}

impl SnapshotScan for BundledTree {
    type Node = Node;
    type Cursor = Cursor;

    /// Descends through newest links while each followed link provably
    /// held the same value at `ts`, then continues through bundles.
    fn first_in_range(&self, low: Key, high: Key, ts: Timestamp, from_start: bool) -> First<Node> {
        let mut node = self.root();
        let mut dir = LEFT;
        let mut newest = !from_start;
        loop {
            let mut child = ptr::null_mut();
            if newest {
                child = node.child(dir);
                newest = node.bundle[dir].unchanged_since(child, ts);
            }
            if !newest {
                match node.bundle[dir].dereference(ts, &self.ctx) {
                    Some(c) => child = c,
                    None => return First::Restart,
                }
            }
            if child.is_null() {
                return First::Empty;
            }
            // SAFETY: guard held by the driver.
            node = unsafe { &*child };
            if node.key < low {
                dir = RIGHT;
            } else if node.key > high {
                dir = LEFT;
            } else {
                return First::Found(child);
            }
        }
    }

    fn start_scan(&self, first: *mut Node, _low: Key, _high: Key, _ts: Timestamp) -> Cursor {
        Cursor { stack: vec![first] }
    }

    fn get_next(
        &self,
        cursor: &mut Cursor,
        low: Key,
        high: Key,
        ts: Timestamp,
        stats: &mut ScanStats,
    ) -> Option<*mut Node> {
        while let Some(p) = cursor.stack.pop() {
            // SAFETY: guard held by the driver.
            let node = unsafe { &*p };
            if node.key >= low {
                let c = self.snapshot_child(node, LEFT, ts);
                if !c.is_null() {
                    cursor.stack.push(c);
                }
            }
            if node.key <= high {
                let c = self.snapshot_child(node, RIGHT, ts);
                if !c.is_null() {
                    cursor.stack.push(c);
                }
            }
            if (low..=high).contains(&node.key) {
                stats.in_range += 1;
                return Some(p);
            }
            stats.out_of_range += 1;
        }
        None
    }

    unsafe fn key_value(node: *mut Node) -> (Key, Value) {
        ((*node).key, (*node).val.load(Ordering::Relaxed))
    }

    fn context(&self) -> &Context {
        &self.ctx
    }
}

impl Prune for BundledTree {
    fn prune_pass(&self) -> usize {
        let min = self.ctx.rqs.min_active(&self.ctx.clock);
        self.prune_bundles(min)
    }
}

impl OrderedSet for BundledTree {
    fn with_config(cfg: Config) -> Self {
        let ctx = Context::new(&cfg);
        let root = Node::alloc(
            Key::MAX,
            0,
            [ptr::null_mut(); 2],
            [
                Bundle::with_entry(ptr::null_mut(), 0, &ctx),
                Bundle::with_entry(ptr::null_mut(), 0, &ctx),
            ],
        );
        BundledTree { root, ctx }
    }

    fn name(&self) -> &'static str {
        "bst"
    }

    fn insert(&self, key: Key, val: Value) -> bool {
        check_key(key);
        let _guard = self.ctx.pin();
        loop {
            let f = {
                let _section = self.ctx.reclaimer.read_section();
                self.find(key)
            };
            if !f.curr.is_null() {
                return false;
            }
            // SAFETY: guard held.
            let prev = unsafe { &*f.prev };
            prev.latch.lock();
            let valid = !prev.deleted.load(Ordering::Acquire)
                && prev.child(f.dir).is_null()
                && prev.tag[f.dir].load(Ordering::Acquire) == f.tag;
            if !valid {
                // SAFETY: locked above.
                unsafe { prev.latch.unlock() };
                continue;
            }
            let node = Node::alloc(
                key,
                val,
                [ptr::null_mut(); 2],
                [Bundle::new(), Bundle::new()],
            );
            // SAFETY: not yet shared.
            let new = unsafe { &*node };
            let plan: UpdatePlan<'_, Node> = [
                (&prev.bundle[f.dir], node),
                (&new.bundle[LEFT], ptr::null_mut()),
                (&new.bundle[RIGHT], ptr::null_mut()),
            ]
            .into_iter()
            .collect();
            linearize_update(plan, LinPoint::Link(&prev.child[f.dir], node), &self.ctx);
            prev.bump_tag(f.dir);
            unsafe { prev.latch.unlock() };
            return true;
        }
    }

    fn remove(&self, key: Key) -> bool {
        check_key(key);
        let guard = self.ctx.pin();
        loop {
            let f = {
                let _section = self.ctx.reclaimer.read_section();
                self.find(key)
            };
            if f.curr.is_null() {
                return false;
            }
            // SAFETY: guard held.
            let (prev, curr) = unsafe { (&*f.prev, &*f.curr) };
            prev.latch.lock();
            curr.latch.lock();
            let unlock = || unsafe {
                curr.latch.unlock();
                prev.latch.unlock();
            };
            let valid = !prev.deleted.load(Ordering::Acquire)
                && !curr.deleted.load(Ordering::Acquire)
                && ptr::eq(prev.child(f.dir), curr)
                && prev.tag[f.dir].load(Ordering::Acquire) == f.tag;
            if !valid {
                unlock();
                continue;
            }
            let (left, right) = (curr.child(LEFT), curr.child(RIGHT));
            if left.is_null() || right.is_null() {
                let only = if left.is_null() { right } else { left };
                curr.deleted.store(true, Ordering::Release);
                let plan: UpdatePlan<'_, Node> =
                    [(&prev.bundle[f.dir], only)].into_iter().collect();
                linearize_update(plan, LinPoint::Link(&prev.child[f.dir], only), &self.ctx);
                prev.bump_tag(f.dir);
                unlock();
                guard.retire(f.curr.cast(), free_node);
                self.ctx.count_retired_node();
                return true;
            }
            let Some(retired) = self.remove_with_two_children(prev, curr, f.dir) else {
                unlock();
                continue;
            };
            unlock();
            for p in retired {
                guard.retire(p, free_node);
                self.ctx.count_retired_node();
            }
            return true;
        }
    }

    fn contains(&self, key: Key) -> bool {
        check_key(key);
        let _guard = self.ctx.pin();
        let _section = self.ctx.reclaimer.read_section();
        !self.find(key).curr.is_null()
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
        let mut out = Vec::new();
        let mut stack = vec![self.root().child(LEFT)];
        while let Some(p) = stack.pop() {
            if p.is_null() {
                continue;
            }
            // SAFETY: guard held.
            let n = unsafe { &*p };
            if n.key >= low {
                stack.push(n.child(LEFT));
            }
            if n.key <= high {
                stack.push(n.child(RIGHT));
            }
            if (low..=high).contains(&n.key) {
                out.push((n.key, n.val.load(Ordering::Relaxed)));
            }
        }
        out.sort_unstable_by_key(|&(k, _)| k);
        out.dedup_by_key(|e| e.0);
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
        for node in std::iter::once(self.root()).chain(self.nodes()) {
            node.latch.lock();
            pruned += node.bundle[LEFT].prune(min_active, &guard);
            pruned += node.bundle[RIGHT].prune(min_active, &guard);
            // SAFETY: locked above.
            unsafe { node.latch.unlock() };
        }
        pruned
    }

    fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let _guard = self.ctx.pin();
        let strict = self.ctx.policy.is_strict();
        let now = self.ctx.clock.read();
        let root = self.root();
        for dir in [LEFT, RIGHT] {
            root.bundle[dir]
                .check(root.child(dir), strict, now)
                .map_err(|detail| InvariantViolation::Bundle {
                    key: root.key,
                    detail,
                })?;
        }
        if !root.child(RIGHT).is_null() {
            return Err(InvariantViolation::Shape(
                "root sentinel has a right child".into(),
            ));
        }
        // (node, exclusive lower bound, exclusive upper bound)
        let mut stack = vec![(root.child(LEFT), 0, Key::MAX)];
        while let Some((p, lo, hi)) = stack.pop() {
            if p.is_null() {
                continue;
            }
            // SAFETY: guard held.
            let n = unsafe { &*p };
            if n.key <= lo || n.key >= hi {
                return Err(InvariantViolation::Order {
                    prev: if n.key <= lo { lo } else { hi },
                    next: n.key,
                });
            }
            if n.deleted.load(Ordering::Acquire) {
                return Err(InvariantViolation::DeletedReachable { key: n.key });
            }
            for dir in [LEFT, RIGHT] {
                n.bundle[dir]
                    .check(n.child(dir), strict, now)
                    .map_err(|detail| InvariantViolation::Bundle { key: n.key, detail })?;
            }
            stack.push((n.child(LEFT), lo, n.key));
            stack.push((n.child(RIGHT), n.key, hi));
        }
        Ok(())
    }

    fn len(&self) -> usize {
        let _guard = self.ctx.pin();
        self.nodes().count()
    }

    fn bundle_census(&self) -> BundleCensus {
        let _guard = self.ctx.pin();
        let mut census = BundleCensus::default();
        for node in std::iter::once(self.root()).chain(self.nodes()) {
            census.add(&node.bundle[LEFT]);
            census.add(&node.bundle[RIGHT]);
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

impl Drop for BundledTree {
    fn drop(&mut self) {
        let mut stack = vec![self.root];
        while let Some(p) = stack.pop() {
            if p.is_null() {
                continue;
            }
            // SAFETY: exclusive access; each reachable node is owned by the
            // tree exactly once.
            unsafe {
                stack.push((*p).child(LEFT));
                stack.push((*p).child(RIGHT));
                free_node(p.cast(), false);
            }
        }
    }
}
