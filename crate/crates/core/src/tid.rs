//! Dense per-process thread indices.
//!
//! Per-thread state (epoch announcements, range-query slots, counters) lives
//! in fixed arrays indexed by a small integer. Indices are handed out lazily
//! on first use and returned to a free list when the thread exits, so the
//! number of live threads, not the number ever spawned, is what is bounded.

use std::cell::Cell;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Maximum number of threads that may concurrently touch bundled structures.
pub const MAX_THREADS: usize = 256;

static FREE: Mutex<Vec<usize>> = Mutex::new(Vec::new());
static NEXT: AtomicUsize = AtomicUsize::new(0);

struct Registration {
    index: Cell<Option<usize>>,
}

impl Registration {
    fn get(&self) -> usize {
        if let Some(i) = self.index.get() {
            return i;
        }
        let i = acquire();
        self.index.set(Some(i));
        i
    }
}

impl Drop for Registration {
    fn drop(&mut self) {
        if let Some(i) = self.index.get() {
            let mut free = FREE.lock().unwrap_or_else(|e| e.into_inner());
            free.push(i);
            // Lowest index first keeps the scanned prefix short.
            free.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
}

fn acquire() -> usize {
    let mut free = FREE.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(i) = free.pop() {
        return i;
    }
    let i = NEXT.fetch_add(1, Ordering::SeqCst);
    assert!(
        i < MAX_THREADS,
        "more than {MAX_THREADS} threads registered with bundled structures"
    );
    i
}

thread_local! {
    static REGISTRATION: Registration = const { Registration { index: Cell::new(None) } };
}

/// Index of the calling thread, allocating one on first use.
#[inline]
pub(crate) fn current() -> usize {
    REGISTRATION.with(Registration::get)
}

/// Upper bound (exclusive) on every index handed out so far.
#[inline]
pub(crate) fn high_water() -> usize {
    NEXT.load(Ordering::SeqCst).min(MAX_THREADS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_stable_per_thread_and_recycled() {
        let mine = current();
        assert_eq!(mine, current());
        let other = std::thread::spawn(current).join().unwrap();
        assert_ne!(mine, other);
        // The exited thread's index becomes available again.
        let again = std::thread::spawn(current).join().unwrap();
        assert!(again < high_water());
    }
}
