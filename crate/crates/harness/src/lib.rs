//! Throughput benchmarks for the bundled ordered sets.
//!
//! A run prefills half the key range, starts worker threads that draw
//! operations from an update/contains/range-query mix with uniform keys,
//! stops after a fixed time or operation count, and then checks the
//! structure in quiescence.

pub mod report;
pub mod run;
pub mod spec;

pub use report::{emit_csv, CsvError};
pub use run::{run_benchmark, OpCounts, RunResult};
pub use spec::{Mix, Relax, SpecError, Stop, Variant, WorkloadSpec};
