//! Running one workload.

use std::hint::black_box;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use bundled_refs::{BackgroundPruner, ClockPolicy, OrderedSet, Prune};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spec::{SpecError, Stop, Variant, WorkloadSpec};

/// Operation counts of one worker, or of a whole run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounts {
    pub inserts: u64,
    pub inserts_ok: u64,
    pub removes: u64,
    pub removes_ok: u64,
    pub contains: u64,
    pub contains_hit: u64,
    pub range_queries: u64,
    /// Keys returned by all range queries together.
    pub range_keys: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.inserts + self.removes + self.contains + self.range_queries
    }

    fn add(&mut self, o: &OpCounts) {
        self.inserts += o.inserts;
        self.inserts_ok += o.inserts_ok;
        self.removes += o.removes;
        self.removes_ok += o.removes_ok;
        self.contains += o.contains;
        self.contains_hit += o.contains_hit;
        self.range_queries += o.range_queries;
        self.range_keys += o.range_keys;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub spec: WorkloadSpec,
    pub prefilled: u64,
    pub counts: OpCounts,
    pub per_thread: Vec<u64>,
    pub wall: Duration,
    pub final_size: u64,
    pub clock: u64,
    /// `None` when the end-of-run sweep passed, otherwise what failed.
    pub sweep_error: Option<String>,
}

impl RunResult {
    pub fn ops_per_sec(&self) -> f64 {
        self.counts.total() as f64 / self.wall.as_secs_f64().max(1e-9)
    }

    pub fn sweep_ok(&self) -> bool {
        self.sweep_error.is_none()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inserts uniformly random keys until half the key range is present.
fn prefill(set: &dyn OrderedSet, spec: &WorkloadSpec) -> u64 {
    let mut rng = rng_for(spec.seed, 0);
    let target = spec.keys / 2;
    let mut n = 0;
    while n < target {
        let k = rng.gen_range(1..=spec.keys);
        if set.insert(k, k) {
            n += 1;
        }
    }
    n
}

fn worker(set: &dyn OrderedSet, spec: &WorkloadSpec, tid: usize, stop: &AtomicBool) -> OpCounts {
    let mut rng = rng_for(spec.seed, tid as u64 + 1);
    let mut c = OpCounts::default();
    let limit = match spec.stop {
        Stop::Ops(n) => n,
        Stop::After(_) => u64::MAX,
    };
    let (u, uc) = (spec.mix.update, spec.mix.update + spec.mix.contains);
    let mut done = 0;
    while done < limit && !stop.load(Ordering::Relaxed) {
        done += 1;
        let roll = rng.gen_range(0..100);
        let k = rng.gen_range(1..=spec.keys);
        if roll < u {
            if rng.gen::<bool>() {
                c.inserts += 1;
                c.inserts_ok += set.insert(k, k) as u64;
            } else {
                c.removes += 1;
                c.removes_ok += set.remove(k) as u64;
            }
        } else if roll < uc {
            c.contains += 1;
            c.contains_hit += set.contains(k) as u64;
        } else {
            let high = k.saturating_add(spec.rq_size).min(spec.keys);
            let got = match spec.variant {
                Variant::Bundle => set.range_query(k, high),
                Variant::Unsafe => set.range_query_unsafe(k, high),
            };
            c.range_queries += 1;
            c.range_keys += black_box(got).len() as u64;
        }
    }
    c
}

/// Prefills a fresh structure, runs the workload and sweeps the result.
pub fn run_benchmark(spec: &WorkloadSpec) -> Result<RunResult, SpecError> {
    spec.validate()?;
    let set = spec.ds.build(spec.config());
    let prefilled = prefill(&*set, spec);
    let pruner = spec.reclaim.then(|| {
        let target: Arc<dyn Prune> = set.clone();
        BackgroundPruner::spawn(spec.cleanup_delay, vec![target])
    });

    let stop = Arc::new(AtomicBool::new(false));
    let barrier = Arc::new(Barrier::new(spec.threads + 1));
    let handles: Vec<_> = (0..spec.threads)
        .map(|tid| {
            let (set, stop, barrier, spec) =
                (set.clone(), stop.clone(), barrier.clone(), spec.clone());
            std::thread::spawn(move || {
                barrier.wait();
                worker(&*set, &spec, tid, &stop)
            })
        })
        .collect();
    barrier.wait();
    let start = Instant::now();
    if let Stop::After(d) = spec.stop {
        std::thread::sleep(d);
        stop.store(true, Ordering::Relaxed);
    }
    let per: Vec<OpCounts> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let wall = start.elapsed();
    if let Some(p) = pruner {
        p.stop();
    }

    let mut counts = OpCounts::default();
    for c in &per {
        counts.add(c);
    }
    let final_size = set.len() as u64;
    let clock = set.clock();
    let sweep_error = sweep(&*set, spec, prefilled, &counts, final_size, clock).err();
    Ok(RunResult {
        spec: spec.clone(),
        prefilled,
        counts,
        per_thread: per.iter().map(OpCounts::total).collect(),
        wall,
        final_size,
        clock,
        sweep_error,
    })
}

/// Quiescent checks after all workers have stopped.
fn sweep(
    set: &dyn OrderedSet,
    spec: &WorkloadSpec,
    prefilled: u64,
    c: &OpCounts,
    final_size: u64,
    clock: u64,
) -> Result<(), String> {
    set.check_invariants().map_err(|e| e.to_string())?;
    let expected = prefilled + c.inserts_ok - c.removes_ok;
    if final_size != expected {
        return Err(format!("size {final_size}, expected {expected}"));
    }
    let updates = prefilled + c.inserts_ok + c.removes_ok;
    match spec.relax.policy() {
        ClockPolicy::Every(1) if clock != updates => {
            Err(format!("clock {clock} after {updates} successful updates"))
        }
        ClockPolicy::Never if clock != 0 => Err(format!("clock advanced to {clock}")),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{Mix, Relax};
    use bundled_refs::SetKind;

    fn small(ds: SetKind) -> WorkloadSpec {
        WorkloadSpec {
            ds,
            keys: 200,
            threads: 1,
            stop: Stop::Ops(2000),
            ..Default::default()
        }
    }

    #[test]
    fn read_only_run_leaves_structure_unchanged() {
        let spec = WorkloadSpec {
            mix: Mix::new(0, 100, 0),
            stop: Stop::After(Duration::from_millis(50)),
            ..small(SetKind::List)
        };
        let r = run_benchmark(&spec).unwrap();
        assert!(r.counts.contains > 0);
        assert_eq!(r.final_size, 100);
        assert_eq!(r.counts.total(), r.counts.contains);
        assert!(r.sweep_ok(), "{:?}", r.sweep_error);
    }

    #[test]
    fn fixed_seed_single_thread_is_reproducible() {
        for ds in SetKind::ALL {
            let spec = small(ds);
            let a = run_benchmark(&spec).unwrap();
            let b = run_benchmark(&spec).unwrap();
            assert_eq!(a.counts, b.counts);
            assert_eq!(a.final_size, b.final_size);
            assert_eq!(a.clock, b.clock);
        }
    }

    #[test]
    fn counts_add_up() {
        let spec = WorkloadSpec {
            threads: 3,
            reclaim: true,
            ..small(SetKind::Tree)
        };
        let r = run_benchmark(&spec).unwrap();
        assert_eq!(r.per_thread, vec![2000; 3]);
        assert_eq!(r.counts.total(), 6000);
        assert_eq!(
            r.clock,
            r.prefilled + r.counts.inserts_ok + r.counts.removes_ok
        );
        assert!(r.sweep_ok(), "{:?}", r.sweep_error);
    }

    #[test]
    fn relaxed_clock_counts() {
        let spec = WorkloadSpec {
            mix: Mix::new(100, 0, 0),
            relax: Relax(Some(5)),
            ..small(SetKind::SkipList)
        };
        let r = run_benchmark(&spec).unwrap();
        let updates = r.prefilled + r.counts.inserts_ok + r.counts.removes_ok;
        // Single-threaded, so one counter drives the clock.
        assert_eq!(r.clock, updates / 5);
        let never = run_benchmark(&WorkloadSpec {
            relax: Relax(None),
            ..spec
        })
        .unwrap();
        assert_eq!(never.clock, 0);
        assert!(never.sweep_ok(), "{:?}", never.sweep_error);
    }

    #[test]
    fn unsafe_variant_runs() {
        let spec = WorkloadSpec {
            variant: Variant::Unsafe,
            mix: Mix::new(20, 0, 80),
            ..small(SetKind::List)
        };
        let r = run_benchmark(&spec).unwrap();
        assert!(r.counts.range_keys > 0);
    }
}
