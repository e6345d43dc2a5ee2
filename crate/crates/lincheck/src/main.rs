use std::process::ExitCode;

use bundled_lincheck::random::{self, RandomParams};
use bundled_lincheck::{scenarios, sequential};
use bundled_refs::SetKind;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Random,
    Scenarios,
    Sequential,
}

#[derive(Debug, Parser)]
#[command(about = "Linearizability checks for the bundled ordered sets")]
struct Args {
    #[arg(long, value_enum)]
    suite: Suite,
    /// list, skiplist, bst or all
    #[arg(long, default_value = "all")]
    ds: String,
    /// Number of seeds (random histories or sequential traces).
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// Operations per sequential trace.
    #[arg(long, default_value_t = 200)]
    steps: usize,
}

fn kinds(ds: &str) -> Result<Vec<SetKind>, String> {
    if ds == "all" {
        return Ok(SetKind::ALL.to_vec());
    }
    ds.parse::<SetKind>()
        .map(|k| vec![k])
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let kinds = match kinds(&args.ds) {
        Ok(k) => k,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let mut failed = false;
    for kind in kinds {
        match args.suite {
            Suite::Random => {
                let (tally, first) = random::run_many(kind, RandomParams::default(), 0..args.seeds);
                println!(
                    "{kind}: {} ok, {} violations, {} budget exhausted",
                    tally.ok, tally.violations, tally.exhausted
                );
                if let Some((seed, v)) = first {
                    failed = true;
                    println!("seed {seed}:\n{v}");
                }
            }
            Suite::Scenarios => {
                for run in scenarios::all(kind) {
                    let status = if run.passed() { "ok" } else { "FAILED" };
                    let outcome = match &run.result {
                        Ok(()) => "holds".to_string(),
                        Err(e) => format!("fails: {e}"),
                    };
                    println!(
                        "{status:6} {} (expected to {}) {outcome}",
                        run.name,
                        if run.expect_ok { "hold" } else { "fail" }
                    );
                    failed |= !run.passed();
                }
            }
            Suite::Sequential => {
                for seed in 0..args.seeds {
                    if let Err(e) = sequential::run_trace(kind, seed, args.steps) {
                        println!("{kind} seed {seed}: {e}");
                        failed = true;
                    }
                }
                println!("{kind}: {} traces done", args.seeds);
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
