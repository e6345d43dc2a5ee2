//! Seeded random concurrent histories.

use std::sync::{Arc, Barrier};

use bundled_refs::{Config, Key, SetKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checker::{check, Verdict, DEFAULT_BUDGET};
use crate::history::{merge, Event, Op, ThreadLog};

#[derive(Debug, Clone, Copy)]
pub struct RandomParams {
    pub threads: usize,
    pub ops_per_thread: usize,
    pub keys: Key,
    pub prefill: usize,
}

impl Default for RandomParams {
    fn default() -> Self {
        Self {
            threads: 4,
            ops_per_thread: 30,
            keys: 16,
            prefill: 8,
        }
    }
}

fn random_op(rng: &mut ChaCha8Rng, keys: Key) -> Op {
    let k = rng.gen_range(1..=keys);
    match rng.gen_range(0..10) {
        0..=2 => Op::Insert(k, k * 10),
        3..=5 => Op::Remove(k),
        6..=7 => Op::Contains(k),
        _ => {
            let hi = k + rng.gen_range(0..keys / 2);
            Op::Range(k, hi)
        }
    }
}

/// Runs one random history on a fresh structure and returns it. Prefill
/// operations run first on their own log, so they precede everything.
pub fn record(kind: SetKind, p: RandomParams, seed: u64) -> Vec<Event> {
    let set = kind.build(Config::default());
    // Perturb interleavings at the protocol's pause points.
    set.hooks().set_callback(|_| {
        if rand::random::<u8>() < 64 {
            std::thread::yield_now();
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pre = ThreadLog::new(p.threads);
    for _ in 0..p.prefill {
        let k = rng.gen_range(1..=p.keys);
        pre.run(&*set, Op::Insert(k, k * 10));
    }
    let barrier = Arc::new(Barrier::new(p.threads));
    let handles: Vec<_> = (0..p.threads)
        .map(|t| {
            let set = Arc::clone(&set);
            let barrier = Arc::clone(&barrier);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            std::thread::spawn(move || {
                let mut log = ThreadLog::new(t);
                barrier.wait();
                for _ in 0..p.ops_per_thread {
                    let op = random_op(&mut rng, p.keys);
                    log.run(&*set, op);
                    if rng.gen_ratio(1, 4) {
                        std::thread::yield_now();
                    }
                }
                log
            })
        })
        .collect();
    let logs: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    set.hooks().clear_callback();
    merge(std::iter::once(pre).chain(logs))
}

/// Records and checks one history.
pub fn run_one(kind: SetKind, p: RandomParams, seed: u64) -> Verdict {
    check(&record(kind, p, seed), DEFAULT_BUDGET)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub ok: usize,
    pub violations: usize,
    pub exhausted: usize,
}

/// Checks `seeds` histories, returning the tally and the first failure.
pub fn run_many(
    kind: SetKind,
    p: RandomParams,
    seeds: std::ops::Range<u64>,
) -> (Tally, Option<(u64, Verdict)>) {
    let mut tally = Tally::default();
    let mut first = None;
    for seed in seeds {
        let v = run_one(kind, p, seed);
        match v {
            Verdict::Linearizable => tally.ok += 1,
            Verdict::Violation { .. } => tally.violations += 1,
            Verdict::BudgetExhausted => tally.exhausted += 1,
        }
        if !v.is_linearizable() && first.is_none() {
            first = Some((seed, v));
        }
    }
    (tally, first)
}
