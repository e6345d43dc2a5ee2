//! Linearizability checking for bundled ordered sets.
//!
//! * [`history`] records timestamped operations from many threads.
//! * [`checker`] searches for a sequential order that explains a history.
//! * [`random`] generates seeded concurrent histories.
//! * [`sequential`] compares single-threaded traces with the oracle over
//!   every range.
//! * [`scenarios`] replays two races around pending bundle entries.

pub mod checker;
pub mod history;
pub mod random;
pub mod scenarios;
pub mod sequential;

pub use checker::{check, Oracle, Verdict, DEFAULT_BUDGET};
pub use history::{Event, Op, Ret, ThreadLog};
