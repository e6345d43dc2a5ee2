//! Wing-Gong style linearizability search against a sequential ordered map.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};

use bundled_refs::{Key, Value};

use crate::history::{Event, Op, Ret};

/// Sequential specification of the ordered set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Oracle {
    map: BTreeMap<Key, Value>,
}

impl Oracle {
    pub fn apply(&mut self, op: &Op) -> Ret {
        match *op {
            Op::Insert(k, v) => match self.map.entry(k) {
                Entry::Occupied(_) => Ret::Bool(false),
                Entry::Vacant(e) => {
                    e.insert(v);
                    Ret::Bool(true)
                }
            },
            Op::Remove(k) => Ret::Bool(self.map.remove(&k).is_some()),
            Op::Contains(k) => Ret::Bool(self.map.contains_key(&k)),
            Op::Range(lo, hi) => Ret::Pairs(self.range(lo, hi)),
        }
    }

    pub fn range(&self, lo: Key, hi: Key) -> Vec<(Key, Value)> {
        if lo > hi {
            return Vec::new();
        }
        self.map.range(lo..=hi).map(|(&k, &v)| (k, v)).collect()
    }

    fn key(&self) -> Vec<(Key, Value)> {
        self.map.iter().map(|(&k, &v)| (k, v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Linearizable,
    /// No order explains the history. `prefix` is the longest sequence of
    /// events that could be linearized; `stuck` are the operations none of
    /// which could be placed next.
    Violation {
        prefix: Vec<Event>,
        stuck: Vec<Event>,
    },
    /// The search gave up before deciding.
    BudgetExhausted,
}

impl Verdict {
    pub fn is_linearizable(&self) -> bool {
        matches!(self, Verdict::Linearizable)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Linearizable => write!(f, "linearizable"),
            Verdict::BudgetExhausted => write!(f, "search budget exhausted"),
            Verdict::Violation { prefix, stuck } => {
                writeln!(f, "not linearizable; longest explainable prefix:")?;
                for e in prefix {
                    writeln!(f, "  t{} {:?} -> {:?}", e.thread, e.op, e.ret)?;
                }
                writeln!(f, "no candidate fits next:")?;
                for e in stuck {
                    writeln!(
                        f,
                        "  t{} {:?} -> {:?} [{}, {}]",
                        e.thread, e.op, e.ret, e.invoke, e.response
                    )?;
                }
                Ok(())
            }
        }
    }
}

/// Default number of search steps before giving up.
pub const DEFAULT_BUDGET: u64 = 2_000_000;

/// Per-thread progress together with the oracle contents.
type Configuration = (Vec<usize>, Vec<(Key, Value)>);

struct Search<'a> {
    threads: Vec<Vec<&'a Event>>,
    seen: HashSet<Configuration>,
    steps: u64,
    budget: u64,
    path: Vec<&'a Event>,
    best: Vec<&'a Event>,
    best_pos: Vec<usize>,
}

enum Outcome {
    Found,
    Dead,
    OutOfBudget,
}

impl<'a> Search<'a> {
    fn dfs(&mut self, pos: &mut Vec<usize>, state: &Oracle) -> Outcome {
        if pos.iter().zip(&self.threads).all(|(&p, t)| p == t.len()) {
            return Outcome::Found;
        }
        self.steps += 1;
        if self.steps > self.budget {
            return Outcome::OutOfBudget;
        }
        if !self.seen.insert((pos.clone(), state.key())) {
            return Outcome::Dead;
        }
        if self.path.len() > self.best.len() {
            self.best = self.path.clone();
            self.best_pos = pos.clone();
        }
        // An event may go next only if it was invoked before every other
        // pending event's thread head returned.
        let heads: Vec<Option<&Event>> = pos
            .iter()
            .zip(&self.threads)
            .map(|(&p, t)| t.get(p).copied())
            .collect();
        for (i, head) in heads.iter().enumerate() {
            let Some(e) = head else { continue };
            let blocked = heads
                .iter()
                .enumerate()
                .any(|(j, h)| j != i && h.is_some_and(|h| h.response < e.invoke));
            if blocked {
                continue;
            }
            let mut next = state.clone();
            if next.apply(&e.op) != e.ret {
                continue;
            }
            pos[i] += 1;
            self.path.push(e);
            let r = self.dfs(pos, &next);
            self.path.pop();
            pos[i] -= 1;
            match r {
                Outcome::Dead => {}
                other => return other,
            }
        }
        Outcome::Dead
    }
}

/// Decides whether `history` is linearizable with respect to [`Oracle`],
/// starting from an empty set.
pub fn check(history: &[Event], budget: u64) -> Verdict {
    let n = history.iter().map(|e| e.thread + 1).max().unwrap_or(0);
    let mut threads: Vec<Vec<&Event>> = vec![Vec::new(); n];
    for e in history {
        threads[e.thread].push(e);
    }
    for t in &mut threads {
        t.sort_by_key(|e| e.invoke);
    }
    let mut search = Search {
        threads,
        seen: HashSet::new(),
        steps: 0,
        budget,
        path: Vec::new(),
        best: Vec::new(),
        best_pos: vec![0; n],
    };
    let mut pos = vec![0; n];
    match search.dfs(&mut pos, &Oracle::default()) {
        Outcome::Found => Verdict::Linearizable,
        Outcome::OutOfBudget => Verdict::BudgetExhausted,
        Outcome::Dead => {
            let stuck = search
                .best_pos
                .iter()
                .zip(&search.threads)
                .filter_map(|(&p, t)| t.get(p).map(|e| (*e).clone()))
                .collect();
            Verdict::Violation {
                prefix: search.best.into_iter().cloned().collect(),
                stuck,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(thread: usize, op: Op, ret: Ret, invoke: u64, response: u64) -> Event {
        Event {
            thread,
            op,
            ret,
            invoke,
            response,
        }
    }

    #[test]
    fn sequential_history_is_linearizable() {
        let h = vec![
            ev(0, Op::Insert(1, 1), Ret::Bool(true), 0, 1),
            ev(0, Op::Contains(1), Ret::Bool(true), 2, 3),
            ev(0, Op::Range(1, 5), Ret::Pairs(vec![(1, 1)]), 4, 5),
        ];
        assert_eq!(check(&h, DEFAULT_BUDGET), Verdict::Linearizable);
    }

    #[test]
    fn overlapping_operations_may_reorder() {
        // The range query overlaps the insert, so either order is allowed.
        let h = vec![
            ev(0, Op::Insert(3, 3), Ret::Bool(true), 0, 10),
            ev(1, Op::Range(1, 5), Ret::Pairs(vec![]), 1, 2),
            ev(1, Op::Range(1, 5), Ret::Pairs(vec![(3, 3)]), 3, 4),
        ];
        assert!(check(&h, DEFAULT_BUDGET).is_linearizable());
    }

    #[test]
    fn stale_range_after_completed_insert_is_rejected() {
        let h = vec![
            ev(0, Op::Insert(3, 3), Ret::Bool(true), 0, 1),
            ev(1, Op::Range(1, 5), Ret::Pairs(vec![]), 2, 3),
        ];
        let v = check(&h, DEFAULT_BUDGET);
        let Verdict::Violation { prefix, stuck } = v else {
            panic!("expected a violation")
        };
        assert_eq!(prefix.len(), 1);
        assert_eq!(stuck.len(), 1);
    }

    #[test]
    fn point_read_contradicting_range_is_rejected() {
        // contains(20) saw the insert, then a later range query missed it.
        let h = vec![
            ev(0, Op::Insert(20, 0), Ret::Bool(true), 0, 100),
            ev(1, Op::Contains(20), Ret::Bool(true), 1, 2),
            ev(1, Op::Range(1, 100), Ret::Pairs(vec![]), 3, 4),
        ];
        assert!(!check(&h, DEFAULT_BUDGET).is_linearizable());
    }

    #[test]
    fn budget_is_reported_separately() {
        let h: Vec<_> = (0..8)
            .map(|t| ev(t, Op::Contains(1), Ret::Bool(false), 0, 100))
            .collect();
        assert_eq!(check(&h, 3), Verdict::BudgetExhausted);
    }
}
