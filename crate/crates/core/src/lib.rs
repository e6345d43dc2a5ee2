//! Concurrent ordered sets whose range queries are linearizable, built on
//! *bundled references*.
//!
//! Every structural link of a data structure is paired with a bundle: a
//! newest-first chain of `(target, timestamp)` entries recording the link's
//! past values. Updates stamp new entries with a global logical clock around
//! their linearization point; a range query reads the clock once and then
//! follows, at every node it enters, the newest entry no younger than that
//! reading. Point operations never look at bundles.
//!
//! Three instantiations are provided:
//!
//! * [`BundledList`]: lazy sorted linked list.
//! * [`BundledSkipList`]: lazy skip list with only the data layer bundled.
//! * [`BundledTree`]: unbalanced internal BST with successor-copy removal.
//!
//! All three implement [`OrderedSet`]. Memory is reclaimed with a per-structure
//! epoch scheme ([`reclaim`]) and stale bundle entries are pruned against the
//! oldest announced range query ([`reclaim::BackgroundPruner`]).

mod bundle;
mod clock;
mod context;
mod latch;
mod rq;
mod tid;
mod update;

pub mod bst;
pub mod hooks;
pub mod list;
pub mod reclaim;
pub mod set;
pub mod skiplist;

pub use bst::BundledTree;
pub use bundle::{Bundle, BundleEntry, Timestamp, PENDING};
pub use clock::{ClockPolicy, GlobalClock};
pub use list::BundledList;
pub use reclaim::{BackgroundPruner, Prune, PrunerReport, ReclaimConfig};
pub use rq::ScanStats;
pub use set::{
    BundleCensus, Config, InvariantViolation, Key, OrderedSet, SetKind, Stats, UnknownSetKind,
    Value, MAX_KEY, MIN_KEY,
};
pub use skiplist::BundledSkipList;
pub use tid::MAX_THREADS;
