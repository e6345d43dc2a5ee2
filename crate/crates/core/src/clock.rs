use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;

use crate::bundle::Timestamp;

/// The global logical clock ordering all successful updates of one structure.
///
/// Starts at 0. Updates advance it with a fetch-and-increment and stamp their
/// bundle entries with the post-increment value.
#[derive(Debug, Default)]
pub struct GlobalClock {
    now: CachePadded<AtomicU64>,
}

impl GlobalClock {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn read(&self) -> Timestamp {
        self.now.load(Ordering::SeqCst)
    }

    /// Atomically increments the clock and returns the new value.
    #[inline]
    pub fn advance(&self) -> Timestamp {
        self.now.fetch_add(1, Ordering::SeqCst) + 1
    }
}

/// How often updates advance the clock.
///
/// `Every(1)` is the linearizable default. Larger thresholds let a thread
/// reuse the current clock value for all but every `T`-th of its successful
/// updates, trading range-query freshness for less contention on the clock.
/// `Never` leaves the clock at its initial value forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockPolicy {
    Every(u64),
    Never,
}

impl Default for ClockPolicy {
    fn default() -> Self {
        ClockPolicy::Every(1)
    }
}

impl ClockPolicy {
    /// Policy for relaxation threshold `t`; `None` means never advance.
    ///
    /// # Panics
    /// If `t == Some(0)`.
    pub fn relaxed(t: Option<u64>) -> Self {
        match t {
            Some(0) => panic!("relaxation threshold must be at least 1"),
            Some(t) => ClockPolicy::Every(t),
            None => ClockPolicy::Never,
        }
    }

    pub fn is_strict(self) -> bool {
        self == ClockPolicy::Every(1)
    }

    /// Whether the `n`-th (1-based) successful update of a thread advances
    /// the clock.
    #[inline]
    pub(crate) fn advances_on(self, n: u64) -> bool {
        match self {
            ClockPolicy::Every(t) => n.is_multiple_of(t),
            ClockPolicy::Never => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_clock_reads_zero_and_advance_returns_post_value() {
        let c = GlobalClock::new();
        assert_eq!(c.read(), 0);
        for k in 1..=4 {
            assert_eq!(c.advance(), k);
        }
        assert_eq!(c.read(), 4);
    }

    #[test]
    fn relaxation_counts() {
        let every5 = ClockPolicy::relaxed(Some(5));
        assert_eq!((1..=100).filter(|&n| every5.advances_on(n)).count(), 20);
        let strict = ClockPolicy::relaxed(Some(1));
        assert!(strict.is_strict());
        assert_eq!((1..=100).filter(|&n| strict.advances_on(n)).count(), 100);
        let never = ClockPolicy::relaxed(None);
        assert_eq!((1..=100).filter(|&n| never.advances_on(n)).count(), 0);
    }

    #[test]
    #[should_panic]
    fn zero_threshold_rejected() {
        ClockPolicy::relaxed(Some(0));
    }
}
