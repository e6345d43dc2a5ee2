//! Test instrumentation: pause points inside the update protocol, switches
//! that disable the pending-entry waits, and poisoning of freed nodes.
//!
//! Everything here is inert unless the `test-hooks` feature is enabled. With
//! the feature off, [`Hooks`] is zero-sized and every check folds to a
//! constant.

#[cfg(feature = "test-hooks")]
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
#[cfg(feature = "test-hooks")]
use std::sync::{Arc, RwLock};

/// Places in the protocol where a registered callback runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookPoint {
    /// An update holds its latches and is about to prepare its bundles.
    BeforePrepare,
    /// An update performed its linearizing write; bundles are still pending.
    AfterLinearize,
    /// A range query found a pending bundle head and is about to wait.
    ReaderPendingWait,
    /// An update found a pending bundle head while preparing and is about to
    /// wait.
    WriterPendingWait,
}

#[cfg(feature = "test-hooks")]
type Callback = Arc<dyn Fn(HookPoint) + Send + Sync>;

#[derive(Default)]
pub struct Hooks {
    #[cfg(feature = "test-hooks")]
    armed: AtomicBool,
    #[cfg(feature = "test-hooks")]
    callback: RwLock<Option<Callback>>,
    #[cfg(feature = "test-hooks")]
    skip_reader_wait: AtomicBool,
    #[cfg(feature = "test-hooks")]
    skip_writer_wait: AtomicBool,
    #[cfg(feature = "test-hooks")]
    poison: AtomicBool,
    #[cfg(feature = "test-hooks")]
    forced_top: AtomicUsize,
}

impl std::fmt::Debug for Hooks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hooks").finish_non_exhaustive()
    }
}

#[cfg(feature = "test-hooks")]
impl Hooks {
    /// Installs `f` to run at every [`HookPoint`] reached by any thread.
    pub fn set_callback(&self, f: impl Fn(HookPoint) + Send + Sync + 'static) {
        *self.callback.write().unwrap() = Some(Arc::new(f));
        self.armed.store(true, Ordering::SeqCst);
    }

    pub fn clear_callback(&self) {
        self.armed.store(false, Ordering::SeqCst);
        *self.callback.write().unwrap() = None;
    }

    /// Range queries stop waiting for pending heads (negative control only).
    pub fn set_skip_reader_wait(&self, skip: bool) {
        self.skip_reader_wait.store(skip, Ordering::SeqCst);
    }

    /// Updates stop waiting for pending heads before installing their own
    /// entry (negative control only).
    pub fn set_skip_writer_wait(&self, skip: bool) {
        self.skip_writer_wait.store(skip, Ordering::SeqCst);
    }

    /// Reclaimed nodes are overwritten with [`POISON`] and quarantined
    /// instead of being returned to the allocator.
    pub fn set_poison(&self, on: bool) {
        self.poison.store(on, Ordering::SeqCst);
    }

    /// Pins the top level of new skip list towers to `top` instead of
    /// drawing it at random. Levels above the maximum are capped.
    pub fn set_forced_top(&self, top: Option<usize>) {
        // Zero means unset; the stored value is `top + 1`.
        self.forced_top
            .store(top.map_or(0, |t| t + 1), Ordering::SeqCst);
    }

    #[inline]
    pub(crate) fn forced_top(&self) -> Option<usize> {
        self.forced_top.load(Ordering::Relaxed).checked_sub(1)
    }

    #[inline]
    pub(crate) fn fire(&self, point: HookPoint) {
        if self.armed.load(Ordering::Relaxed) {
            let cb = self.callback.read().unwrap().clone();
            if let Some(cb) = cb {
                cb(point);
            }
        }
    }

    #[inline]
    pub(crate) fn skip_reader_wait(&self) -> bool {
        self.skip_reader_wait.load(Ordering::Relaxed)
    }

    #[inline]
    pub(crate) fn skip_writer_wait(&self) -> bool {
        self.skip_writer_wait.load(Ordering::Relaxed)
    }

    #[inline]
    pub(crate) fn poison(&self) -> bool {
        self.poison.load(Ordering::Relaxed)
    }
}

#[cfg(not(feature = "test-hooks"))]
impl Hooks {
    #[inline(always)]
    pub(crate) fn fire(&self, _point: HookPoint) {}

    #[inline(always)]
    pub(crate) fn skip_reader_wait(&self) -> bool {
        false
    }

    #[inline(always)]
    pub(crate) fn skip_writer_wait(&self) -> bool {
        false
    }

    #[inline(always)]
    pub(crate) fn poison(&self) -> bool {
        false
    }

    #[inline(always)]
    pub(crate) fn forced_top(&self) -> Option<usize> {
        None
    }
}

/// Value written over the payload of a quarantined node.
pub const POISON: u64 = 0xDEAD_BEEF_DEAD_BEEF;
