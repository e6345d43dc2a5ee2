//! CSV output, one row per run.

use std::fs::OpenOptions;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::run::RunResult;
use crate::spec::Stop;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    ds: &'a str,
    variant: String,
    keys: u64,
    mix: String,
    rq_size: u64,
    threads: usize,
    seconds: f64,
    ops_limit: u64,
    seed: u64,
    relax: String,
    reclaim: bool,
    cleanup_delay_ms: u128,
    wall_secs: f64,
    total_ops: u64,
    ops_per_sec: f64,
    inserts: u64,
    inserts_ok: u64,
    removes: u64,
    removes_ok: u64,
    contains: u64,
    contains_hit: u64,
    range_queries: u64,
    range_keys: u64,
    prefilled: u64,
    final_size: u64,
    clock: u64,
    sweep_ok: bool,
    per_thread_ops: String,
}

impl<'a> From<&'a RunResult> for Row<'a> {
    fn from(r: &'a RunResult) -> Self {
        let s = &r.spec;
        let (seconds, ops_limit) = match s.stop {
            Stop::After(d) => (d.as_secs_f64(), 0),
            Stop::Ops(n) => (0.0, n),
        };
        let c = r.counts;
        Row {
            ds: s.ds.name(),
            variant: s.variant.to_string(),
            keys: s.keys,
            mix: s.mix.to_string(),
            rq_size: s.rq_size,
            threads: s.threads,
            seconds,
            ops_limit,
            seed: s.seed,
            relax: s.relax.to_string(),
            reclaim: s.reclaim,
            cleanup_delay_ms: s.cleanup_delay.as_millis(),
            wall_secs: r.wall.as_secs_f64(),
            total_ops: c.total(),
            ops_per_sec: r.ops_per_sec(),
            inserts: c.inserts,
            inserts_ok: c.inserts_ok,
            removes: c.removes,
            removes_ok: c.removes_ok,
            contains: c.contains,
            contains_hit: c.contains_hit,
            range_queries: c.range_queries,
            range_keys: c.range_keys,
            prefilled: r.prefilled,
            final_size: r.final_size,
            clock: r.clock,
            sweep_ok: r.sweep_ok(),
            per_thread_ops: r
                .per_thread
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

/// Appends one row per result to `path`, writing the header first if the
/// file is new or empty.
pub fn emit_csv(results: &[RunResult], path: &Path) -> Result<(), CsvError> {
    let io_err = |source| CsvError::Io {
        path: path.to_owned(),
        source,
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let empty = file.metadata().map_err(io_err)?.len() == 0;
    let mut w = csv::WriterBuilder::new()
        .has_headers(empty)
        .from_writer(file);
    let csv_err = |source| CsvError::Csv {
        path: path.to_owned(),
        source,
    };
    for r in results {
        w.serialize(Row::from(r)).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::run_benchmark;
    use crate::spec::WorkloadSpec;
    use bundled_refs::SetKind;

    fn result() -> RunResult {
        run_benchmark(&WorkloadSpec {
            ds: SetKind::List,
            keys: 64,
            stop: Stop::Ops(100),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn header_once_then_rows_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let r = result();
        emit_csv(std::slice::from_ref(&r), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("ds,variant,keys,mix,"));
        emit_csv(&[r.clone(), r], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.matches("ds,variant").count(), 1);
    }

    #[test]
    fn bad_path_names_the_path() {
        let err = emit_csv(&[result()], Path::new("/nonexistent/dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.csv"), "{err}");
    }
}
