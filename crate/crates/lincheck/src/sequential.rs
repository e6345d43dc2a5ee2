//! Single-threaded traces compared exhaustively against the oracle.

use bundled_refs::{Config, Key, SetKind, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checker::Oracle;
use crate::history::{apply, Op, Ret};

/// Largest key exercised for `kind`.
pub fn keyspace(kind: SetKind) -> Key {
    match kind {
        SetKind::Tree => 32,
        SetKind::List | SetKind::SkipList => 64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Mismatch {
    #[error("step {step}: {op:?} returned {got:?}, oracle {want:?}")]
    Op {
        step: usize,
        op: Op,
        got: Ret,
        want: Ret,
    },
    #[error("step {step}: range [{low}, {high}] returned {got:?}, oracle {want:?}")]
    Range {
        step: usize,
        low: Key,
        high: Key,
        got: Vec<(Key, u64)>,
        want: Vec<(Key, u64)>,
    },
    #[error("snapshot at ts {ts} returned {got:?}, oracle {want:?}")]
    Snapshot {
        ts: Timestamp,
        got: Vec<(Key, u64)>,
        want: Vec<(Key, u64)>,
    },
}

/// Runs `steps` random updates. After each one, every range `[low, high]`
/// with `0 <= low <= high <= K + 1` is compared with the oracle. At the end
/// every past timestamp's snapshot is compared too.
pub fn run_trace(kind: SetKind, seed: u64, steps: usize) -> Result<(), Mismatch> {
    let k = keyspace(kind);
    let set = kind.build(Config::default());
    let mut oracle = Oracle::default();
    let mut history = vec![oracle.range(1, k)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for step in 0..steps {
        let key = rng.gen_range(1..=k);
        let op = match rng.gen_range(0..3) {
            0 => Op::Contains(key),
            1 => Op::Remove(key),
            _ => Op::Insert(key, key ^ seed),
        };
        let got = apply(&*set, &op);
        let want = oracle.apply(&op);
        if got != want {
            return Err(Mismatch::Op {
                step,
                op,
                got,
                want,
            });
        }
        if got == Ret::Bool(true) && !matches!(op, Op::Contains(_)) {
            history.push(oracle.range(1, k));
        }
        for low in 0..=k + 1 {
            for high in low..=k + 1 {
                let mut got = set.range_query(low, high);
                got.sort_unstable();
                let want = oracle.range(low, high);
                if got != want {
                    return Err(Mismatch::Range {
                        step,
                        low,
                        high,
                        got,
                        want,
                    });
                }
            }
        }
    }
    for (ts, want) in history.into_iter().enumerate() {
        let ts = ts as Timestamp;
        let mut got = set.snapshot_at(1, k, ts);
        got.sort_unstable();
        if got != want {
            return Err(Mismatch::Snapshot { ts, got, want });
        }
    }
    Ok(())
}
