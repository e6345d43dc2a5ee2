//! Memory reclamation: epoch-based deferred freeing of unlinked nodes and
//! pruned bundle entries, the table of active range-query timestamps that
//! bounds pruning, and a background pruning thread.

use std::cell::UnsafeCell;
use std::marker::PhantomData;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_utils::{Backoff, CachePadded};

use crate::bundle::{Timestamp, PENDING};
use crate::clock::GlobalClock;
use crate::context::Context;
use crate::tid::{self, MAX_THREADS};

/// Reclamation settings for one structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReclaimConfig {
    /// When false, unlinked nodes and pruned entries are kept until the
    /// structure is dropped and no epoch guards are taken.
    pub enabled: bool,
    /// Pause between background pruning passes.
    pub cleanup_delay: Duration,
}

impl Default for ReclaimConfig {
    fn default() -> Self {
        ReclaimConfig {
            enabled: false,
            cleanup_delay: Duration::ZERO,
        }
    }
}

impl ReclaimConfig {
    pub fn enabled(cleanup_delay: Duration) -> Self {
        ReclaimConfig {
            enabled: true,
            cleanup_delay,
        }
    }
}

/// What one free call released.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Freed {
    pub nodes: u64,
    pub entries: u64,
}

/// Frees the object at the pointer; when `poison` is set, the object is
/// instead scribbled over and leaked.
pub(crate) type FreeFn = unsafe fn(*mut u8, bool) -> Freed;

struct Retired {
    ptr: *mut u8,
    free: FreeFn,
}

#[derive(Default)]
struct Bag {
    epoch: u64,
    items: Vec<Retired>,
}

#[derive(Default)]
struct Limbo {
    bags: [Bag; 3],
    epoch: u64,
    check_next: usize,
    leaked: Vec<Retired>,
}

const ACTIVE: u64 = 1;
const SCAN_PER_PIN: usize = 2;

struct Record {
    /// `epoch << 1 | ACTIVE` while inside a guard, `epoch << 1` otherwise.
    announced: AtomicU64,
    /// Owned by the thread with this index.
    limbo: UnsafeCell<Limbo>,
    /// Odd while inside a read section.
    section: AtomicU64,
}

/// Per-structure epoch reclaimer.
pub(crate) struct Reclaimer {
    enabled: bool,
    epoch: CachePadded<AtomicU64>,
    records: Box<[CachePadded<Record>]>,
    freed_nodes: AtomicU64,
    freed_entries: AtomicU64,
}

// SAFETY: each limbo is only touched by the thread owning its index, or by
// `Drop`, which has exclusive access.
unsafe impl Sync for Reclaimer {}
unsafe impl Send for Reclaimer {}

impl Reclaimer {
    pub(crate) fn new(enabled: bool) -> Self {
        let records = (0..MAX_THREADS)
            .map(|_| {
                CachePadded::new(Record {
                    announced: AtomicU64::new(0),
                    limbo: UnsafeCell::new(Limbo::default()),
                    section: AtomicU64::new(0),
                })
            })
            .collect();
        Reclaimer {
            enabled,
            epoch: CachePadded::new(AtomicU64::new(0)),
            records,
            freed_nodes: AtomicU64::new(0),
            freed_entries: AtomicU64::new(0),
        }
    }

    pub(crate) fn enabled(&self) -> bool {
        self.enabled
    }

    #[cfg(test)]
    pub(crate) fn epoch(&self) -> u64 {
        self.epoch.load(Ordering::SeqCst)
    }

    pub(crate) fn freed(&self) -> (u64, u64) {
        (
            self.freed_nodes.load(Ordering::Relaxed),
            self.freed_entries.load(Ordering::Relaxed),
        )
    }

    #[allow(clippy::mut_from_ref)]
    unsafe fn limbo(&self, tid: usize) -> &mut Limbo {
        &mut *self.records[tid].limbo.get()
    }

    fn enter(&self, tid: usize, poison: bool) {
        let rec = &self.records[tid];
        debug_assert_eq!(
            rec.announced.load(Ordering::Relaxed) & ACTIVE,
            0,
            "epoch guards must not nest"
        );
        let mut e = self.epoch.load(Ordering::SeqCst);
        loop {
            rec.announced.store((e << 1) | ACTIVE, Ordering::SeqCst);
            let now = self.epoch.load(Ordering::SeqCst);
            if now == e {
                break;
            }
            e = now;
        }
        // SAFETY: we own `tid`.
        let limbo = unsafe { self.limbo(tid) };
        if limbo.epoch != e {
            limbo.epoch = e;
            limbo.check_next = 0;
            // A bag is tagged with the epoch its owner had pinned, which may
            // trail the global epoch by one. Readers pinned in either epoch
            // are gone once the global epoch is three past the tag.
            for bag in &mut limbo.bags {
                if bag.epoch + 3 <= e {
                    self.free_bag(bag, poison);
                }
            }
        }
        self.scan_step(limbo, e);
    }

    /// Checks a few other threads' announcements; once every thread has been
    /// seen quiescent or in epoch `e`, tries to open epoch `e + 1`.
    fn scan_step(&self, limbo: &mut Limbo, e: u64) {
        let hw = tid::high_water();
        for _ in 0..SCAN_PER_PIN {
            if limbo.check_next >= hw {
                let _ = self
                    .epoch
                    .compare_exchange(e, e + 1, Ordering::SeqCst, Ordering::SeqCst);
                limbo.check_next = 0;
                return;
            }
            let a = self.records[limbo.check_next]
                .announced
                .load(Ordering::SeqCst);
            if a & ACTIVE == 0 || a >> 1 == e {
                limbo.check_next += 1;
            } else {
                return;
            }
        }
    }

    fn exit(&self, tid: usize) {
        let rec = &self.records[tid];
        let a = rec.announced.load(Ordering::Relaxed);
        rec.announced.store(a & !ACTIVE, Ordering::Release);
    }

    fn retire(&self, tid: usize, item: Retired, poison: bool) {
        // SAFETY: we own `tid`.
        let limbo = unsafe { self.limbo(tid) };
        if !self.enabled {
            limbo.leaked.push(item);
            return;
        }
        let e = limbo.epoch;
        let bag = &mut limbo.bags[(e % 3) as usize];
        if bag.epoch != e {
            // Anything left here is from epoch e - 3 or older.
            self.free_bag(bag, poison);
            bag.epoch = e;
        }
        bag.items.push(item);
    }

    fn free_bag(&self, bag: &mut Bag, poison: bool) {
        if bag.items.is_empty() {
            return;
        }
        let mut total = Freed::default();
        for r in bag.items.drain(..) {
            // SAFETY: every guard that could have observed `r` has ended.
            let f = unsafe { (r.free)(r.ptr, poison) };
            total.nodes += f.nodes;
            total.entries += f.entries;
        }
        self.freed_nodes.fetch_add(total.nodes, Ordering::Relaxed);
        self.freed_entries
            .fetch_add(total.entries, Ordering::Relaxed);
    }

    /// Opens the next epoch if no thread is inside a guard from an older one.
    pub(crate) fn try_advance(&self) -> bool {
        let e = self.epoch.load(Ordering::SeqCst);
        for rec in &self.records[..tid::high_water()] {
            let a = rec.announced.load(Ordering::SeqCst);
            if a & ACTIVE != 0 && a >> 1 != e {
                return false;
            }
        }
        self.epoch
            .compare_exchange(e, e + 1, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }

    /// Marks the calling thread as inside a read section until the returned
    /// value is dropped. Sections are what [`Reclaimer::synchronize`] waits for.
    pub(crate) fn read_section(&self) -> ReadSection<'_> {
        let counter = &self.records[tid::current()].section;
        let v = counter.load(Ordering::Relaxed);
        debug_assert_eq!(v & 1, 0, "read sections must not nest");
        counter.store(v + 1, Ordering::SeqCst);
        fence(Ordering::SeqCst);
        ReadSection {
            counter,
            _not_send: PhantomData,
        }
    }

    /// Waits until every read section that was open on another thread when
    /// this call began has closed.
    pub(crate) fn synchronize(&self) {
        fence(Ordering::SeqCst);
        let me = tid::current();
        for (i, rec) in self.records[..tid::high_water()].iter().enumerate() {
            if i == me {
                continue;
            }
            let v = rec.section.load(Ordering::SeqCst);
            if v & 1 == 1 {
                let backoff = Backoff::new();
                while rec.section.load(Ordering::SeqCst) == v {
                    backoff.snooze();
                }
            }
        }
    }
}

impl Drop for Reclaimer {
    fn drop(&mut self) {
        for rec in self.records.iter_mut() {
            let limbo = rec.limbo.get_mut();
            let bagged = limbo.bags.iter_mut().flat_map(|b| b.items.drain(..));
            for r in bagged.chain(limbo.leaked.drain(..)) {
                // SAFETY: the structure is gone, so nothing can reach `r`.
                unsafe { (r.free)(r.ptr, false) };
            }
        }
    }
}

/// Protection of every node and entry reachable while it is held. Ends on
/// drop. A guard of a structure with reclamation disabled is free.
pub(crate) struct Guard<'a> {
    ctx: &'a Context,
    tid: usize,
    _not_send: PhantomData<*mut ()>,
}

impl<'a> Guard<'a> {
    pub(crate) fn new(ctx: &'a Context) -> Self {
        let tid = tid::current();
        if ctx.reclaimer.enabled {
            ctx.reclaimer.enter(tid, ctx.hooks.poison());
        }
        Guard {
            ctx,
            tid,
            _not_send: PhantomData,
        }
    }

    /// Schedules `ptr` to be released with `free` once no guard can still
    /// reach it.
    pub(crate) fn retire(&self, ptr: *mut u8, free: FreeFn) {
        self.ctx
            .reclaimer
            .retire(self.tid, Retired { ptr, free }, self.ctx.hooks.poison());
    }
}

impl Drop for Guard<'_> {
    fn drop(&mut self) {
        if self.ctx.reclaimer.enabled {
            self.ctx.reclaimer.exit(self.tid);
        }
    }
}

pub(crate) struct ReadSection<'a> {
    counter: &'a AtomicU64,
    _not_send: PhantomData<*mut ()>,
}

impl Drop for ReadSection<'_> {
    fn drop(&mut self) {
        let v = self.counter.load(Ordering::Relaxed);
        self.counter.store(v + 1, Ordering::Release);
    }
}

const IDLE: u64 = u64::MAX - 1;

/// Timestamps of in-flight range queries, one slot per thread.
pub(crate) struct ActiveRqTable {
    slots: Box<[CachePadded<AtomicU64>]>,
}

impl ActiveRqTable {
    pub(crate) fn new() -> Self {
        ActiveRqTable {
            slots: (0..MAX_THREADS)
                .map(|_| CachePadded::new(AtomicU64::new(IDLE)))
                .collect(),
        }
    }

    /// Publishes a fresh snapshot timestamp for the calling thread.
    pub(crate) fn announce<'a>(&'a self, clock: &GlobalClock) -> RqSlot<'a> {
        let slot = &self.slots[tid::current()];
        debug_assert_eq!(
            slot.load(Ordering::Relaxed),
            IDLE,
            "range queries must not nest"
        );
        let mut s = RqSlot { slot, ts: 0 };
        s.reannounce(clock);
        s
    }

    /// Publishes a caller-chosen timestamp, for queries over a past snapshot.
    pub(crate) fn announce_at(&self, ts: Timestamp) -> RqSlot<'_> {
        let slot = &self.slots[tid::current()];
        slot.store(ts, Ordering::SeqCst);
        RqSlot { slot, ts }
    }

    /// The oldest timestamp any in-flight or future range query can use.
    pub(crate) fn min_active(&self, clock: &GlobalClock) -> Timestamp {
        let mut min = clock.read();
        for slot in &self.slots[..tid::high_water()] {
            let backoff = Backoff::new();
            let mut v = slot.load(Ordering::SeqCst);
            while v == PENDING {
                backoff.snooze();
                v = slot.load(Ordering::SeqCst);
            }
            if v != IDLE {
                min = min.min(v);
            }
        }
        min
    }
}

pub(crate) struct RqSlot<'a> {
    slot: &'a AtomicU64,
    ts: Timestamp,
}

impl RqSlot<'_> {
    pub(crate) fn ts(&self) -> Timestamp {
        self.ts
    }

    /// Replaces the announced timestamp with a fresh clock read.
    pub(crate) fn reannounce(&mut self, clock: &GlobalClock) {
        self.slot.store(PENDING, Ordering::SeqCst);
        self.ts = clock.read();
        self.slot.store(self.ts, Ordering::SeqCst);
    }
}

impl Drop for RqSlot<'_> {
    fn drop(&mut self) {
        self.slot.store(IDLE, Ordering::Release);
    }
}

/// Something whose bundles can be pruned.
pub trait Prune: Send + Sync {
    /// Removes every bundle entry no current or future range query can
    /// need. Returns how many entries were removed.
    fn prune_pass(&self) -> usize;
}

/// Totals from a finished [`BackgroundPruner`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PrunerReport {
    pub passes: u64,
    pub entries_pruned: u64,
}

/// A thread that repeatedly prunes a set of structures, sleeping between
/// passes.
pub struct BackgroundPruner {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<PrunerReport>>,
}

impl BackgroundPruner {
    pub fn spawn(delay: Duration, targets: Vec<Arc<dyn Prune>>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("bundle-pruner".into())
            .spawn(move || {
                let mut report = PrunerReport::default();
                while !flag.load(Ordering::Acquire) {
                    for t in &targets {
                        report.entries_pruned += t.prune_pass() as u64;
                    }
                    report.passes += 1;
                    if delay.is_zero() {
                        std::thread::yield_now();
                    } else {
                        std::thread::sleep(delay);
                    }
                }
                report
            })
            .expect("failed to spawn pruner thread");
        BackgroundPruner {
            stop,
            handle: Some(handle),
        }
    }

    pub fn stop(mut self) -> PrunerReport {
        self.halt()
    }

    fn halt(&mut self) -> PrunerReport {
        self.stop.store(true, Ordering::Release);
        match self.handle.take() {
            Some(h) => h.join().expect("pruner thread panicked"),
            None => PrunerReport::default(),
        }
    }
}

impl Drop for BackgroundPruner {
    fn drop(&mut self) {
        self.halt();
    }
}
