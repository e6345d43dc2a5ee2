use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use bundled_harness::{emit_csv, run_benchmark, Mix, Relax, Stop, Variant, WorkloadSpec};
use bundled_refs::SetKind;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(about = "Throughput benchmark for the bundled ordered sets")]
struct Args {
    /// list, skiplist or bst
    #[arg(long)]
    ds: SetKind,
    /// bundle or unsafe
    #[arg(long, default_value = "bundle")]
    variant: Variant,
    #[arg(long, default_value_t = 100_000)]
    keys: u64,
    /// Update, contains and range-query percentages, e.g. 50:40:10
    #[arg(long, default_value = "50:40:10")]
    mix: Mix,
    #[arg(long, default_value_t = 50)]
    rqsize: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 3.0)]
    seconds: f64,
    /// Run a fixed number of operations per thread instead of a duration.
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Advance the clock every T successful updates per thread, or `inf`.
    #[arg(long, default_value = "1")]
    relax: Relax,
    #[arg(long, value_enum, default_value = "off")]
    reclaim: OnOff,
    #[arg(long, default_value_t = 0)]
    cleanup_delay_ms: u64,
    /// CSV file to append the result row to.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let a = Args::parse();
    let stop = match a.ops {
        Some(n) => Stop::Ops(n),
        None if a.seconds.is_finite() && a.seconds > 0.0 => {
            Stop::After(Duration::from_secs_f64(a.seconds))
        }
        None => {
            eprintln!("invalid seconds: must be positive");
            return ExitCode::from(2);
        }
    };
    let spec = WorkloadSpec {
        ds: a.ds,
        variant: a.variant,
        keys: a.keys,
        mix: a.mix,
        rq_size: a.rqsize,
        threads: a.threads,
        stop,
        seed: a.seed,
        relax: a.relax,
        reclaim: matches!(a.reclaim, OnOff::On),
        cleanup_delay: Duration::from_millis(a.cleanup_delay_ms),
    };
    let r = match run_benchmark(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    println!(
        "{} {} {} threads={} ops/s={:.0} total={} size={} clock={}",
        spec.ds,
        spec.variant,
        spec.mix,
        spec.threads,
        r.ops_per_sec(),
        r.counts.total(),
        r.final_size,
        r.clock
    );
    if let Some(path) = &a.out {
        if let Err(e) = emit_csv(std::slice::from_ref(&r), path) {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    }
    match &r.sweep_error {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("post-run sweep failed: {e}");
            ExitCode::FAILURE
        }
    }
}
