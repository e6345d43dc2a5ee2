//! Bundles: per-link, newest-first histories of timestamped link values.

use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering};

use crossbeam_utils::Backoff;

use crate::context::Context;
use crate::hooks::HookPoint;
use crate::reclaim::{Freed, Guard};

/// Logical time. Values handed out by the clock are always below [`PENDING`].
pub type Timestamp = u64;

/// Marks an entry whose update has not yet obtained its timestamp.
pub const PENDING: Timestamp = u64::MAX;

/// One historical value of a link.
///
/// `target` and `next` are fixed once the entry is published, except that
/// pruning may cut `next` to null. `ts` moves exactly once, from [`PENDING`]
/// to the update's timestamp.
pub struct BundleEntry<N> {
    target: *mut N,
    ts: AtomicU64,
    next: AtomicPtr<BundleEntry<N>>,
}

impl<N> BundleEntry<N> {
    pub fn target(&self) -> *mut N {
        self.target
    }

    pub fn ts(&self) -> Timestamp {
        self.ts.load(Ordering::Acquire)
    }
}

/// The history of one link. The head entry always carries the link's
/// newest value.
pub struct Bundle<N> {
    head: AtomicPtr<BundleEntry<N>>,
}

impl<N> Default for Bundle<N> {
    fn default() -> Self {
        Self::new()
    }
}

impl<N> Bundle<N> {
    /// A bundle with no history, for nodes that are not yet reachable.
    pub const fn new() -> Self {
        Bundle {
            head: AtomicPtr::new(ptr::null_mut()),
        }
    }

    /// A bundle seeded with one finalized entry, used for sentinels.
    pub(crate) fn with_entry(target: *mut N, ts: Timestamp, ctx: &Context) -> Self {
        ctx.count_entry();
        let entry = Box::into_raw(Box::new(BundleEntry {
            target,
            ts: AtomicU64::new(ts),
            next: AtomicPtr::new(ptr::null_mut()),
        }));
        Bundle {
            head: AtomicPtr::new(entry),
        }
    }

    /// Installs a pending entry for `target` at the head.
    ///
    /// If the current head is still pending, waits for its update to
    /// finalize first so that entries stay ordered by timestamp.
    pub(crate) fn prepare(&self, target: *mut N, ctx: &Context) -> NonNull<BundleEntry<N>> {
        ctx.count_entry();
        let entry = Box::into_raw(Box::new(BundleEntry {
            target,
            ts: AtomicU64::new(PENDING),
            next: AtomicPtr::new(ptr::null_mut()),
        }));
        let backoff = Backoff::new();
        loop {
            let expected = self.head.load(Ordering::Acquire);
            if !expected.is_null() && !ctx.hooks.skip_writer_wait() {
                // SAFETY: head entries live as long as the owning node, which
                // the caller keeps alive by holding its latch.
                let current = unsafe { &*expected };
                if current.ts.load(Ordering::Acquire) == PENDING {
                    ctx.hooks.fire(HookPoint::WriterPendingWait);
                    wait_finalized(current);
                }
            }
            // SAFETY: not yet published.
            unsafe { (*entry).next.store(expected, Ordering::Relaxed) };
            if self
                .head
                .compare_exchange(expected, entry, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                // SAFETY: non-null by construction.
                return unsafe { NonNull::new_unchecked(entry) };
            }
            backoff.spin();
        }
    }

    /// Stamps the pending head with `ts`.
    pub(crate) fn finalize(&self, ts: Timestamp, ctx: &Context) {
        let head = self.head.load(Ordering::Acquire);
        debug_assert!(!head.is_null(), "finalize on an empty bundle");
        // SAFETY: the finalizing update installed the head and still holds
        // the owning node's latch.
        let head = unsafe { &*head };
        debug_assert!(
            head.ts.load(Ordering::Relaxed) == PENDING || ctx.hooks.skip_writer_wait(),
            "finalize on a non-pending head"
        );
        head.ts.store(ts, Ordering::Release);
    }

    /// The target of the newest entry with timestamp `<= ts`, waiting first
    /// if the head is pending. `None` means no entry satisfies `ts`; a
    /// `Some(null)` is a valid nil link.
    pub(crate) fn dereference(&self, ts: Timestamp, ctx: &Context) -> Option<*mut N> {
        let mut cur = self.head.load(Ordering::Acquire);
        if cur.is_null() {
            return None;
        }
        // SAFETY: entries are reclaimed only after every guard that could
        // have observed them has ended; callers hold a guard.
        let head = unsafe { &*cur };
        if !ctx.hooks.skip_reader_wait() && head.ts.load(Ordering::Acquire) == PENDING {
            ctx.hooks.fire(HookPoint::ReaderPendingWait);
            wait_finalized(head);
        }
        while !cur.is_null() {
            // SAFETY: as above.
            let e = unsafe { &*cur };
            if e.ts.load(Ordering::Acquire) <= ts {
                return Some(e.target);
            }
            cur = e.next.load(Ordering::Acquire);
        }
        None
    }

    /// True when the head is finalized at or before `ts` and still targets
    /// `current`: the link then had the same value at `ts` as it has now.
    pub(crate) fn unchanged_since(&self, current: *mut N, ts: Timestamp) -> bool {
        let head = self.head.load(Ordering::Acquire);
        if head.is_null() {
            return false;
        }
        // SAFETY: see `dereference`.
        let head = unsafe { &*head };
        let head_ts = head.ts.load(Ordering::Acquire);
        head_ts != PENDING && head_ts <= ts && head.target == current
    }

    /// Cuts the chain after the newest entry with timestamp `<= min_active`
    /// and retires the detached suffix. Returns the number of entries cut.
    pub(crate) fn prune(&self, min_active: Timestamp, guard: &Guard<'_>) -> usize {
        let mut cur = self.head.load(Ordering::Acquire);
        while !cur.is_null() {
            // SAFETY: caller holds a guard and the owner's latch.
            let e = unsafe { &*cur };
            if e.ts.load(Ordering::Acquire) <= min_active {
                let suffix = e.next.swap(ptr::null_mut(), Ordering::AcqRel);
                if suffix.is_null() {
                    return 0;
                }
                let cut = chain_len(suffix);
                guard.retire(suffix.cast(), free_chain::<N>);
                return cut;
            }
            cur = e.next.load(Ordering::Acquire);
        }
        0
    }

    /// `(ts, target)` for every entry, newest first. Only meaningful when no
    /// update on this bundle is in flight.
    pub fn entries(&self) -> Vec<(Timestamp, *mut N)> {
        let mut out = Vec::new();
        let mut cur = self.head.load(Ordering::Acquire);
        while !cur.is_null() {
            // SAFETY: see `dereference`.
            let e = unsafe { &*cur };
            out.push((e.ts.load(Ordering::Acquire), e.target));
            cur = e.next.load(Ordering::Acquire);
        }
        out
    }

    /// Checks the descending-timestamp and head-freshness invariants.
    /// Meaningful only in quiescence.
    pub(crate) fn check(
        &self,
        newest: *mut N,
        strict: bool,
        clock_now: Timestamp,
    ) -> Result<(), String> {
        let entries = self.entries();
        let Some(&(head_ts, head_target)) = entries.first() else {
            return Err("bundle has no entries".into());
        };
        if head_target != newest {
            return Err(format!(
                "bundle head (ts {head_ts}) does not target the newest link"
            ));
        }
        for (i, &(ts, _)) in entries.iter().enumerate() {
            if ts == PENDING {
                return Err(format!("entry {i} is still pending"));
            }
            if ts > clock_now {
                return Err(format!("entry {i} has ts {ts} beyond clock {clock_now}"));
            }
        }
        for w in entries.windows(2) {
            let (newer, older) = (w[0].0, w[1].0);
            if newer < older || (strict && newer == older) {
                return Err(format!("entries out of order: {newer} before {older}"));
            }
        }
        Ok(())
    }

    /// Frees every entry. Returns how many were freed.
    ///
    /// # Safety
    /// No other thread may access this bundle, now or later.
    pub(crate) unsafe fn free_entries(&self) -> u64 {
        let head = self.head.swap(ptr::null_mut(), Ordering::AcqRel);
        free_chain::<N>(head.cast(), false).entries
    }
}

fn wait_finalized<N>(entry: &BundleEntry<N>) {
    let backoff = Backoff::new();
    while entry.ts.load(Ordering::Acquire) == PENDING {
        backoff.snooze();
    }
}

fn chain_len<N>(mut cur: *mut BundleEntry<N>) -> usize {
    let mut n = 0;
    while !cur.is_null() {
        n += 1;
        // SAFETY: callers guarantee the chain is alive.
        cur = unsafe { (*cur).next.load(Ordering::Acquire) };
    }
    n
}

/// Frees a detached chain of entries starting at `p`.
unsafe fn free_chain<N>(p: *mut u8, _poison: bool) -> Freed {
    let mut cur = p.cast::<BundleEntry<N>>();
    let mut entries = 0;
    while !cur.is_null() {
        let e = Box::from_raw(cur);
        cur = e.next.load(Ordering::Relaxed);
        entries += 1;
    }
    Freed { nodes: 0, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::set::Config;
    use std::sync::Arc;

    // Stand-in node type; only pointer identity matters here.
    struct N(#[allow(dead_code)] u64);

    fn node(k: u64) -> *mut N {
        Box::into_raw(Box::new(N(k)))
    }

    fn ctx() -> Context {
        Context::new(&Config::default())
    }

    /// Node 10's bundle from the four-update example: (4 -> 30), (3 -> 20).
    fn node10_bundle(ctx: &Context, n20: *mut N, n30: *mut N) -> Bundle<N> {
        let b = Bundle::new();
        b.prepare(n20, ctx);
        b.finalize(3, ctx);
        b.prepare(n30, ctx);
        b.finalize(4, ctx);
        b
    }

    #[test]
    fn prepare_installs_pending_head_over_history() {
        let ctx = ctx();
        let (tail, n10, n30) = (node(u64::MAX), node(10), node(30));
        let b = Bundle::with_entry(tail, 0, &ctx);
        b.prepare(n30, &ctx);
        b.finalize(2, &ctx);
        let e = b.prepare(n10, &ctx);
        assert_eq!(unsafe { e.as_ref() }.ts(), PENDING);
        assert_eq!(b.entries(), vec![(PENDING, n10), (2, n30), (0, tail)]);
        b.finalize(3, &ctx);
        assert_eq!(b.entries(), vec![(3, n10), (2, n30), (0, tail)]);
        assert_eq!(b.dereference(3, &ctx), Some(n10));
        unsafe { b.free_entries() };
    }

    #[test]
    fn dereference_picks_newest_satisfying_entry() {
        let ctx = ctx();
        let (n20, n30) = (node(20), node(30));
        let b = node10_bundle(&ctx, n20, n30);
        assert_eq!(b.dereference(3, &ctx), Some(n20));
        assert_eq!(b.dereference(4, &ctx), Some(n30));
        assert_eq!(b.dereference(2, &ctx), None);
        assert_eq!(b.dereference(1000, &ctx), Some(n30));
        unsafe { b.free_entries() };
    }

    #[test]
    fn empty_bundle_never_satisfies() {
        let ctx = ctx();
        let b: Bundle<N> = Bundle::new();
        assert_eq!(b.dereference(0, &ctx), None);
        assert!(!b.unchanged_since(ptr::null_mut(), 5));
    }

    #[test]
    fn check_reports_order_and_freshness_violations() {
        let ctx = ctx();
        let (n20, n30) = (node(20), node(30));
        let b = node10_bundle(&ctx, n20, n30);
        assert!(b.check(n30, true, 4).is_ok());
        assert!(b.check(n20, true, 4).is_err());
        assert!(b.check(n30, true, 3).is_err());
        b.prepare(n20, &ctx);
        assert!(
            b.check(n20, true, 5).is_err(),
            "pending head must be reported"
        );
        b.finalize(4, &ctx);
        assert!(
            b.check(n20, true, 5).is_err(),
            "equal ts rejected when strict"
        );
        assert!(b.check(n20, false, 5).is_ok());
        unsafe { b.free_entries() };
    }

    #[test]
    fn prune_keeps_satisfier_of_oldest_query() {
        let ctx = ctx();
        let (n20, n30) = (node(20), node(30));
        let b = node10_bundle(&ctx, n20, n30);
        let guard = ctx.pin();
        assert_eq!(b.prune(3, &guard), 0, "entry 3 still satisfies ts 3");
        assert_eq!(b.dereference(3, &ctx), Some(n20));
        assert_eq!(b.prune(4, &guard), 1);
        assert_eq!(b.entries(), vec![(4, n30)]);
        drop(guard);
        unsafe { b.free_entries() };
    }

    #[test]
    fn concurrent_prepares_stay_ordered() {
        let ctx = Arc::new(ctx());
        let b: Arc<Bundle<N>> = Arc::new(Bundle::with_entry(ptr::null_mut(), 0, &ctx));
        let threads: Vec<_> = (0..4)
            .map(|_| {
                let (ctx, b) = (ctx.clone(), b.clone());
                std::thread::spawn(move || {
                    for _ in 0..500 {
                        b.prepare(ptr::null_mut(), &ctx);
                        let ts = ctx.clock.advance();
                        b.finalize(ts, &ctx);
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        let ts: Vec<_> = b.entries().into_iter().map(|(t, _)| t).collect();
        assert_eq!(ts.len(), 2001);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        unsafe { b.free_entries() };
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Pruning against `min` never changes what any `ts >= min`
            /// dereferences to.
            #[test]
            fn pruning_preserves_dereference(
                gaps in prop::collection::vec(1u64..4, 1..12),
                min in 0u64..40,
            ) {
                let ctx = ctx();
                let b: Bundle<N> = Bundle::with_entry(ptr::null_mut(), 0, &ctx);
                let mut ts = 0;
                for g in &gaps {
                    b.prepare(node(ts), &ctx);
                    ts += g;
                    b.finalize(ts, &ctx);
                }
                let before: Vec<_> = (min..=ts + 2).map(|t| b.dereference(t, &ctx)).collect();
                let guard = ctx.pin();
                b.prune(min, &guard);
                drop(guard);
                let after: Vec<_> = (min..=ts + 2).map(|t| b.dereference(t, &ctx)).collect();
                prop_assert_eq!(before, after);
                unsafe { b.free_entries() };
            }
        }
    }
}
