use parking_lot::lock_api::RawMutex as _;

/// Per-node mutual exclusion. Lock and unlock are decoupled from any guard
/// object because hand-over-hand protocols release latches in orders that do
/// not nest.
pub(crate) struct Latch(parking_lot::RawMutex);

impl Latch {
    pub(crate) const fn new() -> Self {
        Latch(parking_lot::RawMutex::INIT)
    }

    #[inline]
    pub(crate) fn lock(&self) {
        self.0.lock();
    }

    /// # Safety
    /// The calling thread must hold the latch.
    #[inline]
    pub(crate) unsafe fn unlock(&self) {
        self.0.unlock();
    }
}
