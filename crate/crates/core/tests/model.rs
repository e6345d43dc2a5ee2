//! Single-threaded operation sequences compared against a `BTreeMap`,
//! including range queries over every past snapshot.

use std::collections::BTreeMap;

use bundled_refs::{BundledList, BundledSkipList, BundledTree, Config, Key, OrderedSet};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Insert(Key),
    Remove(Key),
    Range(Key, Key),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (1u64..=24).prop_map(Op::Insert),
        (1u64..=24).prop_map(Op::Remove),
        (0u64..=26, 0u64..=26).prop_map(|(a, b)| Op::Range(a, b)),
    ]
}

fn check<S: OrderedSet>(ops: &[Op]) -> Result<(), TestCaseError> {
    let set = S::with_config(Config::default());
    let mut model = BTreeMap::new();
    let mut snapshots = vec![model.clone()];
    for op in ops {
        match *op {
            Op::Insert(k) => {
                let fresh = !model.contains_key(&k);
                prop_assert_eq!(set.insert(k, k + 1000), fresh);
                if fresh {
                    model.insert(k, k + 1000);
                    snapshots.push(model.clone());
                }
            }
            Op::Remove(k) => {
                let present = model.remove(&k).is_some();
                prop_assert_eq!(set.remove(k), present);
                if present {
                    snapshots.push(model.clone());
                }
            }
            Op::Range(a, b) => {
                let want: Vec<_> = if a <= b {
                    model.range(a..=b).map(|(&k, &v)| (k, v)).collect()
                } else {
                    vec![]
                };
                prop_assert_eq!(set.range_query(a, b), want);
            }
        }
        prop_assert_eq!(set.clock() as usize, snapshots.len() - 1);
    }
    set.check_invariants()
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    for (ts, snap) in snapshots.iter().enumerate() {
        let want: Vec<_> = snap.iter().map(|(&k, &v)| (k, v)).collect();
        prop_assert_eq!(set.snapshot_at(1, 24, ts as u64), want, "ts {}", ts);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn list_matches_model(ops in prop::collection::vec(op(), 0..120)) {
        check::<BundledList>(&ops)?;
    }

    #[test]
    fn skiplist_matches_model(ops in prop::collection::vec(op(), 0..120)) {
        check::<BundledSkipList>(&ops)?;
    }

    #[test]
    fn tree_matches_model(ops in prop::collection::vec(op(), 0..120)) {
        check::<BundledTree>(&ops)?;
    }
}
