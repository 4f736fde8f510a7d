//! Cross-module invariants checked on generated inputs.

use std::collections::BTreeMap;

use ice_core::bench::qerror;
use ice_core::estimator::{estimate, project_to_ranks, EstimatorConfig};
use ice_core::filter::{rank_length, recursive_filter, FilterConfig, SplitStrategy};
use ice_core::index::IceIndex;
use ice_core::{AttributeSchema, QueryBox, ZKey};
use proptest::prelude::*;

fn schema_and_box() -> impl Strategy<Value = (AttributeSchema, QueryBox)> {
    proptest::collection::vec(1u8..=5, 1..=3).prop_flat_map(|betas| {
        let bounds: Vec<_> = betas.iter().map(|&b| (0u64..(1 << b), 0u64..(1 << b))).collect();
        (Just(betas), bounds).prop_map(|(betas, pairs)| {
            let schema = AttributeSchema::new(betas).unwrap();
            let low = pairs.iter().map(|&(a, b)| a.min(b)).collect();
            let high = pairs.iter().map(|&(a, b)| a.max(b)).collect();
            (schema, QueryBox { low, high })
        })
    })
}

#[derive(Clone, Debug)]
enum Op {
    Insert(u128),
    Delete(usize),
    Modify(usize, u128),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(
        prop_oneof![
            3 => (0u128..512).prop_map(Op::Insert),
            2 => any::<usize>().prop_map(Op::Delete),
            1 => (any::<usize>(), 0u128..512).prop_map(|(i, k)| Op::Modify(i, k)),
        ],
        0..400,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_covers_box_with_disjoint_sorted_intervals(
        (schema, qbox) in schema_and_box(),
        depth in 0u32..8,
        opt in any::<bool>(),
    ) {
        let strategy = if opt { SplitStrategy::OptimalOneSplit } else { SplitStrategy::Midpoint };
        let ivs = recursive_filter(&schema, &qbox, FilterConfig { max_depth: depth, strategy });
        prop_assert!(!ivs.is_empty());
        prop_assert!(ivs.len() <= 1usize << depth);
        for w in ivs.windows(2) {
            prop_assert!(w[0].up < w[1].low);
        }
        for z in 0..=schema.max_key().0 {
            let k = ZKey(z);
            let hits = ivs.iter().filter(|iv| iv.contains(k)).count();
            if schema.in_box(k, &qbox) {
                prop_assert_eq!(hits, 1);
            }
        }
    }

    #[test]
    fn deeper_filters_never_widen((schema, qbox) in schema_and_box(), depth in 0u32..7) {
        let len = |d| -> u128 {
            recursive_filter(&schema, &qbox, FilterConfig::with_depth(d)).iter().map(|iv| iv.up.0 - iv.low.0 + 1).sum()
        };
        prop_assert!(len(depth + 1) <= len(depth));
    }

    #[test]
    fn index_tracks_multiset_under_updates(ops in ops(), fanout in 4usize..12) {
        let schema = AttributeSchema::new(vec![3, 3, 3]).unwrap();
        let mut idx = IceIndex::new(schema, fanout).unwrap();
        let mut bag: Vec<ZKey> = Vec::new();
        for op in ops {
            match op {
                Op::Insert(k) => {
                    idx.insert(ZKey(k)).unwrap();
                    bag.push(ZKey(k));
                }
                Op::Delete(i) if !bag.is_empty() => {
                    let k = bag.swap_remove(i % bag.len());
                    idx.delete(k).unwrap();
                }
                Op::Modify(i, k) if !bag.is_empty() => {
                    let i = i % bag.len();
                    idx.modify(bag[i], ZKey(k)).unwrap();
                    bag[i] = ZKey(k);
                }
                _ => {}
            }
        }
        prop_assert!(idx.check_invariants().is_ok());
        let mut counts: BTreeMap<ZKey, u64> = BTreeMap::new();
        for &k in &bag {
            *counts.entry(k).or_insert(0) += 1;
        }
        let stored: Vec<(ZKey, u64)> = idx.iter().collect();
        prop_assert_eq!(stored, counts.into_iter().collect::<Vec<_>>());
        bag.sort_unstable();
        for (r, &k) in bag.iter().enumerate() {
            prop_assert_eq!(idx.rank2key(r as u64 + 1).unwrap(), k);
        }
    }

    #[test]
    fn snapshot_round_trips(keys in proptest::collection::vec(0u128..4096, 0..2000), fanout in 4usize..64) {
        let schema = AttributeSchema::new(vec![6, 6]).unwrap();
        let idx = IceIndex::bulk_load(schema, keys.into_iter().map(ZKey), fanout).unwrap();
        let back = IceIndex::read_snapshot(&idx.to_snapshot_bytes()[..]).unwrap();
        prop_assert_eq!(back.iter().collect::<Vec<_>>(), idx.iter().collect::<Vec<_>>());
        prop_assert_eq!(back.to_snapshot_bytes(), idx.to_snapshot_bytes());
        prop_assert!(back.check_invariants().is_ok());
    }

    #[test]
    fn estimates_respect_their_universe(
        keys in proptest::collection::vec(0u128..1024, 1..3000),
        (low, high) in (0u64..32, 0u64..32, 0u64..32, 0u64..32)
            .prop_map(|(a, b, c, d)| (vec![a.min(b), c.min(d)], vec![a.max(b), c.max(d)])),
        seed in any::<u64>(),
        hybrid in any::<bool>(),
    ) {
        let schema = AttributeSchema::new(vec![5, 5]).unwrap();
        let idx = IceIndex::bulk_load(schema, keys.into_iter().map(ZKey), 8).unwrap();
        let qbox = QueryBox { low, high };
        let cfg = EstimatorConfig { budget: 200, hybrid, seed, ..Default::default() };
        let filter = FilterConfig::default();
        let r = estimate(&idx, &qbox, filter, &cfg).unwrap();
        let card = idx.range_query_exact(&qbox).cardinality;
        let ivs = recursive_filter(idx.schema(), &qbox, filter);
        prop_assert_eq!(r.r_sum, rank_length(&idx, &ivs));
        prop_assert_eq!(r.r_sum, project_to_ranks(&ivs, &idx).r_sum());
        prop_assert!(r.r_sum >= card);
        prop_assert!(r.count <= r.budget);
        prop_assert!(r.est >= 0.0 && r.est <= r.r_sum as f64);
        if r.used_exact_scan {
            prop_assert_eq!(r.est, card as f64);
        }
        if card == 0 {
            prop_assert_eq!(r.est, 0.0);
        }
        // identical seed, identical answer
        prop_assert_eq!(estimate(&idx, &qbox, filter, &cfg).unwrap().without_timing(), r.without_timing());
    }

    #[test]
    fn qerror_is_symmetric_and_at_least_one(e in 1e-6f64..1e9, t in 1e-6f64..1e9) {
        let q = qerror(e, t).unwrap();
        prop_assert!(q >= 1.0);
        prop_assert_eq!(q, qerror(t, e).unwrap());
    }
}
