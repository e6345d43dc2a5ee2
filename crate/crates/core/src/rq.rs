//! The structure-independent range query driver.

use crate::bundle::Timestamp;
use crate::context::Context;
use crate::set::{Key, Value, MAX_KEY, MIN_KEY};

/// Counters describing one range query's traversal.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ScanStats {
    /// Nodes visited during collection whose key was in range.
    pub in_range: u64,
    /// Nodes visited during collection whose key was outside the range.
    pub out_of_range: u64,
    /// Times the query had to re-read the clock and start over.
    pub restarts: u64,
}

pub(crate) enum First<N> {
    /// No key of the snapshot lies in range.
    Empty,
    /// The smallest in-range node of the snapshot.
    Found(*mut N),
    /// The traversal reached a node with no entry old enough; retry.
    Restart,
}

/// The two traversal steps a structure supplies to the driver.
pub(crate) trait SnapshotScan {
    type Node;
    type Cursor;

    /// Locates the first node of the `ts` snapshot with key in
    /// `[low, high]`. With `from_start` set the walk may not take shortcuts
    /// through the current state and must not return [`First::Restart`].
    fn first_in_range(
        &self,
        low: Key,
        high: Key,
        ts: Timestamp,
        from_start: bool,
    ) -> First<Self::Node>;

    fn start_scan(
        &self,
        first: *mut Self::Node,
        low: Key,
        high: Key,
        ts: Timestamp,
    ) -> Self::Cursor;

    /// The next in-range node of the snapshot in key order, or `None` when
    /// the scan is complete.
    fn get_next(
        &self,
        cursor: &mut Self::Cursor,
        low: Key,
        high: Key,
        ts: Timestamp,
        stats: &mut ScanStats,
    ) -> Option<*mut Self::Node>;

    /// # Safety
    /// `node` must come from this structure's scan under a live guard.
    unsafe fn key_value(node: *mut Self::Node) -> (Key, Value);

    fn context(&self) -> &Context;
}

/// Clamps user bounds to the key domain; `None` if nothing can match.
pub(crate) fn clamp(low: Key, high: Key) -> Option<(Key, Key)> {
    let (low, high) = (low.max(MIN_KEY), high.min(MAX_KEY));
    (low <= high).then_some((low, high))
}

fn collect<S: SnapshotScan>(
    s: &S,
    first: *mut S::Node,
    low: Key,
    high: Key,
    ts: Timestamp,
    stats: &mut ScanStats,
) -> Vec<(Key, Value)> {
    let mut out = Vec::new();
    let mut cursor = s.start_scan(first, low, high, ts);
    while let Some(node) = s.get_next(&mut cursor, low, high, ts, stats) {
        // SAFETY: the caller holds a guard for the whole scan.
        out.push(unsafe { S::key_value(node) });
    }
    // Tree scans yield keys in depth-first order.
    out.sort_unstable_by_key(|&(k, _)| k);
    out
}

/// Linearizable range query: all pairs with key in `[low, high]` as of a
/// single clock reading, in ascending key order.
pub(crate) fn range_query<S: SnapshotScan>(
    s: &S,
    low: Key,
    high: Key,
    stats: &mut ScanStats,
) -> Vec<(Key, Value)> {
    let Some((low, high)) = clamp(low, high) else {
        return Vec::new();
    };
    let ctx = s.context();
    let _guard = ctx.pin();
    let mut slot = ctx.rqs.announce(&ctx.clock);
    loop {
        match s.first_in_range(low, high, slot.ts(), false) {
            First::Empty => return Vec::new(),
            First::Found(first) => return collect(s, first, low, high, slot.ts(), stats),
            First::Restart => {
                stats.restarts += 1;
                slot.reannounce(&ctx.clock);
            }
        }
    }
}

/// Range query over the snapshot at a past timestamp `ts`. Only exact if no
/// pruning pass has run since the clock passed `ts`.
pub(crate) fn snapshot_at<S: SnapshotScan>(
    s: &S,
    low: Key,
    high: Key,
    ts: Timestamp,
) -> Vec<(Key, Value)> {
    let Some((low, high)) = clamp(low, high) else {
        return Vec::new();
    };
    let ctx = s.context();
    let _guard = ctx.pin();
    let _slot = ctx.rqs.announce_at(ts);
    let mut stats = ScanStats::default();
    let first = match s.first_in_range(low, high, ts, false) {
        First::Restart => s.first_in_range(low, high, ts, true),
        other => other,
    };
    match first {
        First::Empty => Vec::new(),
        First::Found(first) => collect(s, first, low, high, ts, &mut stats),
        First::Restart => unreachable!("a walk from the start cannot restart"),
    }
}
