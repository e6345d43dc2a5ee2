//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! Throughput checks compare configurations that run interleaved in the
//! same process, so only their ratios matter.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bundled_harness::{run_benchmark, Mix, Relax, Stop, Variant, WorkloadSpec};
use bundled_lincheck::random::{self, RandomParams};
use bundled_lincheck::{scenarios, sequential};
use bundled_refs::{
    BackgroundPruner, BundledList, Config, Key, OrderedSet, Prune, ReclaimConfig, SetKind,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn worked_example() -> Outcome {
    let l = BundledList::new();
    assert!(l.insert(20, 20) && l.insert(30, 30) && l.insert(10, 10) && l.remove(20));
    let tail = Key::MAX;
    let want: BTreeMap<Key, Vec<(u64, Key)>> = BTreeMap::from([
        (0, vec![(3, 10), (1, 20), (0, tail)]),
        (10, vec![(4, 30), (3, 20)]),
        (20, vec![(2, 30), (1, tail)]),
        (30, vec![(2, tail)]),
    ]);
    let got = l.history();
    ensure(got == want, || format!("bundles {got:?}"))?;
    let snaps: [&[Key]; 5] = [&[], &[20], &[20, 30], &[10, 20, 30], &[10, 30]];
    for (ts, want) in snaps.iter().enumerate() {
        let got: Vec<Key> = l
            .snapshot_at(1, 100, ts as u64)
            .into_iter()
            .map(|p| p.0)
            .collect();
        ensure(got == *want, || format!("ts {ts}: {got:?}"))?;
    }
    Ok("bundle chains and snapshots at ts 0..=4 match".into())
}

fn linearizability() -> Outcome {
    let mut parts = Vec::new();
    for kind in SetKind::ALL {
        let (t, first) = random::run_many(kind, RandomParams::default(), 0..1000);
        if let Some((seed, v)) = first {
            return Err(format!("{kind} seed {seed}: {v}"));
        }
        parts.push(format!("{kind} {}/1000", t.ok));
    }
    Ok(parts.join(", "))
}

fn scenario_replays() -> Outcome {
    let mut n = 0;
    for kind in SetKind::ALL {
        for run in scenarios::all(kind) {
            ensure(run.passed(), || {
                format!(
                    "{}: expected ok={}, got {:?}",
                    run.name, run.expect_ok, run.result
                )
            })?;
            n += 1;
        }
    }
    Ok(format!(
        "{n} replays including negative controls behave as expected"
    ))
}

fn snapshot_exactness() -> Outcome {
    for kind in SetKind::ALL {
        for seed in 0..10 {
            sequential::run_trace(kind, seed, 200)
                .map_err(|e| format!("{kind} seed {seed}: {e}"))?;
        }
    }
    Ok("10 traces x 200 ops per structure, every range after every op".into())
}

fn minimality() -> Outcome {
    let mut detail = Vec::new();
    for kind in SetKind::ALL {
        let set = kind.build(Config::default());
        let mut rng = StdRng::seed_from_u64(11);
        let mut model = BTreeMap::new();
        for _ in 0..2000 {
            let k = rng.gen_range(1..=1000);
            if rng.gen_bool(0.7) {
                if set.insert(k, k) {
                    model.insert(k, k);
                }
            } else if set.remove(k) {
                model.remove(&k);
            }
        }
        let mut outside = 0;
        for _ in 0..100 {
            let low = rng.gen_range(1..=1000);
            let high = low + rng.gen_range(0..200);
            let (mut got, stats) = set.range_query_with_stats(low, high);
            got.sort_unstable();
            let want: Vec<_> = model.range(low..=high).map(|(&k, &v)| (k, v)).collect();
            ensure(got == want, || {
                format!("{kind} [{low}, {high}] wrong result")
            })?;
            ensure(stats.in_range == got.len() as u64, || {
                format!(
                    "{kind} [{low}, {high}]: visited {} in range, returned {}",
                    stats.in_range,
                    got.len()
                )
            })?;
            outside += stats.out_of_range;
        }
        detail.push(format!("{kind} ({outside} out-of-range visits)"));
    }
    Ok(format!(
        "in-range visits equal result size: {}",
        detail.join(", ")
    ))
}

fn space_bound() -> Outcome {
    let n = 10_000u64;
    let mut order: Vec<Key> = (1..=n).collect();
    let mut rng = StdRng::seed_from_u64(5);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut detail = Vec::new();
    for kind in SetKind::ALL {
        let set = kind.build(Config::default());
        for &k in &order {
            assert!(set.insert(k, k));
        }
        let created = set.stats().entries_created;
        // The tree installs one entry in the parent and one in each of the
        // new node's two child bundles; its root starts with two entries.
        let want = match kind {
            SetKind::List | SetKind::SkipList => 2 * n + 1,
            SetKind::Tree => 3 * n + 2,
        };
        ensure(created == want, || {
            format!("{kind}: {created} entries, expected {want}")
        })?;
        detail.push(format!("{kind} {created}"));
    }
    Ok(format!("n = {n}: {}", detail.join(", ")))
}

fn quiescent_cleanup() -> Outcome {
    const KEYS: Key = 2048;
    let mut detail = Vec::new();
    for kind in SetKind::ALL {
        let set = kind.build(Config {
            reclaim: ReclaimConfig::enabled(Duration::from_millis(1)),
            ..Config::default()
        });
        let pruner = BackgroundPruner::spawn(
            Duration::from_millis(1),
            vec![set.clone() as Arc<dyn Prune>],
        );
        let net: Arc<Vec<AtomicI64>> = Arc::new((0..=KEYS).map(|_| AtomicI64::new(0)).collect());
        let stop = Arc::new(AtomicBool::new(false));
        let workers: Vec<_> = (0..8u64)
            .map(|t| {
                let (set, net, stop) = (set.clone(), net.clone(), stop.clone());
                std::thread::spawn(move || {
                    let mut rng = StdRng::seed_from_u64(t);
                    while !stop.load(Ordering::Relaxed) {
                        let k = rng.gen_range(1..=KEYS);
                        match rng.gen_range(0..10) {
                            0..=3 => {
                                if set.insert(k, k) {
                                    net[k as usize].fetch_add(1, Ordering::Relaxed);
                                }
                            }
                            4..=7 => {
                                if set.remove(k) {
                                    net[k as usize].fetch_sub(1, Ordering::Relaxed);
                                }
                            }
                            _ => {
                                set.range_query(k, k + 64);
                            }
                        }
                    }
                })
            })
            .collect();
        std::thread::sleep(Duration::from_secs(3));
        stop.store(true, Ordering::Relaxed);
        for w in workers {
            w.join().unwrap();
        }
        pruner.stop();
        set.prune_pass();
        let census = set.bundle_census();
        ensure(
            census.max_len == 1 && census.entries == census.bundles,
            || format!("{kind}: {census:?}"),
        )?;
        let model: BTreeMap<Key, Key> = (1..=KEYS)
            .filter(|&k| net[k as usize].load(Ordering::Relaxed) == 1)
            .map(|k| (k, k))
            .collect();
        let mut rng = StdRng::seed_from_u64(99);
        for i in 0..200 {
            let (low, high) = if i == 0 {
                (1, KEYS)
            } else {
                let low = rng.gen_range(1..=KEYS);
                (low, low + rng.gen_range(0..256))
            };
            let mut got = set.range_query(low, high);
            got.sort_unstable();
            let want: Vec<_> = model.range(low..=high).map(|(&k, &v)| (k, v)).collect();
            ensure(got == want, || {
                format!("{kind} [{low}, {high}] differs from oracle")
            })?;
        }
        set.check_invariants().map_err(|e| format!("{kind}: {e}"))?;
        detail.push(format!("{kind} {} bundles", census.bundles));
    }
    Ok(format!(
        "one entry per bundle after pruning: {}",
        detail.join(", ")
    ))
}

fn bench(spec: &WorkloadSpec) -> Result<f64, String> {
    let r = run_benchmark(spec).map_err(|e| e.to_string())?;
    if let Some(e) = &r.sweep_error {
        return Err(format!("{} sweep failed: {e}", spec.ds));
    }
    Ok(r.ops_per_sec())
}

/// Runs each spec `rounds` times, round-robin, and returns mean throughputs.
fn interleaved(specs: &[WorkloadSpec], rounds: usize) -> Result<Vec<f64>, String> {
    let mut sums = vec![0.0; specs.len()];
    for _ in 0..rounds {
        for (s, spec) in sums.iter_mut().zip(specs) {
            *s += bench(spec)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / rounds as f64).collect())
}

fn keys_for(kind: SetKind) -> u64 {
    match kind {
        SetKind::List => 1000,
        _ => 100_000,
    }
}

fn timed(kind: SetKind, mix: Mix, threads: usize, secs: f64) -> WorkloadSpec {
    WorkloadSpec {
        ds: kind,
        keys: keys_for(kind),
        mix,
        threads,
        stop: Stop::After(Duration::from_secs_f64(secs)),
        ..WorkloadSpec::default()
    }
}

fn reclamation_overhead() -> Outcome {
    let mut detail = Vec::new();
    for kind in SetKind::ALL {
        let leaky = timed(kind, Mix::new(50, 0, 50), 8, 1.0);
        let reclaim = WorkloadSpec {
            reclaim: true,
            ..leaky.clone()
        };
        let tp = interleaved(&[leaky, reclaim], 3)?;
        let ratio = tp[1] / tp[0];
        ensure(ratio >= 0.60, || {
            format!("{kind}: reclaiming at {:.0}% of leaky", ratio * 100.0)
        })?;
        detail.push(format!("{kind} {:.0}%", ratio * 100.0));
    }
    Ok(format!(
        "reclaiming / leaky throughput: {}",
        detail.join(", ")
    ))
}

fn relaxation_trend() -> Outcome {
    let mut detail = Vec::new();
    for kind in SetKind::ALL {
        let base = timed(kind, Mix::new(90, 0, 10), 8, 1.0);
        let specs: Vec<_> = [1, 5, 50]
            .into_iter()
            .map(|t| WorkloadSpec {
                relax: Relax(Some(t)),
                ..base.clone()
            })
            .collect();
        let tp = interleaved(&specs, 3)?;
        let within = |a: f64, b: f64| b >= 0.9 * a;
        ensure(
            within(tp[0], tp[1]) && within(tp[1], tp[2]) && within(tp[0], tp[2]),
            || {
                format!(
                    "{kind}: T=1,5,50 -> {:.0}, {:.0}, {:.0} ops/s",
                    tp[0], tp[1], tp[2]
                )
            },
        )?;
        detail.push(format!(
            "{kind} {:.2}x/{:.2}x",
            tp[1] / tp[0],
            tp[2] / tp[0]
        ));
    }
    Ok(format!(
        "T=5 and T=50 relative to T=1: {}",
        detail.join(", ")
    ))
}

fn unsafe_ceiling() -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut n = 0;
    for kind in SetKind::ALL {
        for mix in [
            Mix::new(50, 40, 10),
            Mix::new(10, 80, 10),
            Mix::new(50, 0, 50),
        ] {
            for threads in [1, 8] {
                let bundled = timed(kind, mix, threads, 0.4);
                let plain = WorkloadSpec {
                    variant: Variant::Unsafe,
                    ..bundled.clone()
                };
                let tp = interleaved(&[bundled, plain], 3)?;
                let ratio = tp[0] / tp[1];
                let name = format!("{kind} {mix} {threads}t");
                ensure(ratio <= 1.05, || {
                    format!("{name}: bundled at {:.2}x unsafe", ratio)
                })?;
                if ratio > worst.0 {
                    worst = (ratio, name);
                }
                n += 1;
            }
        }
    }
    Ok(format!(
        "{n} configurations, highest bundled/unsafe {:.2}x ({})",
        worst.0, worst.1
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("worked example replay", worked_example),
        ("linearizability", linearizability),
        ("scenario replays", scenario_replays),
        ("snapshot exactness", snapshot_exactness),
        ("range query minimality", minimality),
        ("space bound", space_bound),
        ("quiescent cleanup", quiescent_cleanup),
        ("reclamation overhead", reclamation_overhead),
        ("relaxation trend", relaxation_trend),
        ("unsafe ceiling", unsafe_ceiling),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let out = check();
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
