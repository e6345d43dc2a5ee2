use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;

use crate::clock::{ClockPolicy, GlobalClock};
use crate::hooks::Hooks;
use crate::reclaim::{ActiveRqTable, Guard, Reclaimer};
use crate::set::{Config, Stats};
use crate::tid::{self, MAX_THREADS};

/// Per-thread tallies. Only the owning thread writes its row.
#[derive(Default)]
pub(crate) struct ThreadCounters {
    entries_created: AtomicU64,
    successful_updates: AtomicU64,
    nodes_retired: AtomicU64,
}

fn bump(c: &AtomicU64) -> u64 {
    let n = c.load(Ordering::Relaxed) + 1;
    c.store(n, Ordering::Relaxed);
    n
}

/// State shared by every operation on one structure.
pub(crate) struct Context {
    pub clock: GlobalClock,
    pub policy: ClockPolicy,
    pub reclaimer: Reclaimer,
    pub rqs: ActiveRqTable,
    pub hooks: Hooks,
    pub config: Config,
    counters: Box<[CachePadded<ThreadCounters>]>,
}

impl Context {
    pub(crate) fn new(cfg: &Config) -> Self {
        Context {
            clock: GlobalClock::new(),
            policy: cfg.relax,
            reclaimer: Reclaimer::new(cfg.reclaim.enabled),
            rqs: ActiveRqTable::new(),
            hooks: Hooks::default(),
            config: *cfg,
            counters: (0..MAX_THREADS).map(|_| CachePadded::default()).collect(),
        }
    }

    #[inline]
    pub(crate) fn pin(&self) -> Guard<'_> {
        Guard::new(self)
    }

    /// Pushes the epoch forward far enough for the calling thread's retired
    /// objects to be freed, unless another thread is inside an operation.
    pub(crate) fn flush_reclaim(&self) {
        for _ in 0..4 {
            self.reclaimer.try_advance();
            drop(self.pin());
        }
    }

    fn mine(&self) -> &ThreadCounters {
        &self.counters[tid::current()]
    }

    pub(crate) fn count_entry(&self) {
        bump(&self.mine().entries_created);
    }

    pub(crate) fn count_retired_node(&self) {
        bump(&self.mine().nodes_retired);
    }

    /// Records a successful update by the calling thread and returns its
    /// 1-based count.
    pub(crate) fn count_update(&self) -> u64 {
        bump(&self.mine().successful_updates)
    }

    pub(crate) fn stats(&self) -> Stats {
        let mut s = Stats {
            clock: self.clock.read(),
            ..Stats::default()
        };
        for c in self.counters.iter() {
            s.entries_created += c.entries_created.load(Ordering::Relaxed);
            s.successful_updates += c.successful_updates.load(Ordering::Relaxed);
            s.nodes_retired += c.nodes_retired.load(Ordering::Relaxed);
        }
        (s.nodes_freed, s.entries_freed) = self.reclaimer.freed();
        s
    }
}
