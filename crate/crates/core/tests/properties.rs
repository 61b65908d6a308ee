use std::collections::BTreeSet;

use proptest::prelude::*;

use resilient_skiplist::config::{eval_rate, RunConfig};
use resilient_skiplist::key::Key;
use resilient_skiplist::phase_buffer::{build_bitonic, raise_levels};
use resilient_skiplist::phase_delete::{delete_phase, oracle_delete_all};
use resilient_skiplist::phase_merge::{oracle_merge, wave_merge};
use resilient_skiplist::simcore::LocalFabric;
use resilient_skiplist::skiplist::{NetworkTag, SkipList};

/// Sorted distinct keys with heights in `0..6`.
fn towers(max: usize) -> impl Strategy<Value = (Vec<u64>, Vec<u32>)> {
    prop::collection::btree_set(1u64..10_000, 0..max).prop_flat_map(|keys| {
        let n = keys.len();
        (
            Just(keys.into_iter().collect::<Vec<_>>()),
            prop::collection::vec(0u32..6, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn built_lists_validate_and_round_trip((keys, heights) in towers(80)) {
        let l = SkipList::oracle_build(&keys, &heights).unwrap();
        l.validate().unwrap();
        prop_assert_eq!(l.len(), keys.len());
        prop_assert_eq!(l.ids().collect::<Vec<_>>(), keys.clone());
        let text = l.dump(NetworkTag::Live);
        let lines: Vec<&str> = text.lines().collect();
        prop_assert_eq!(SkipList::parse_dump(&lines).unwrap(), l.clone());
        for &k in &keys {
            prop_assert!(l.search(l.head(), Key::Id(k)).found);
        }
    }

    #[test]
    fn bitonic_sorts_anything(mut v in prop::collection::vec(any::<u16>(), 1..100)) {
        let net = build_bitonic(v.len());
        net.validate().unwrap();
        let mut padded: Vec<u32> = v.iter().map(|&x| x as u32).collect();
        padded.resize(net.width, u32::MAX);
        net.apply(&mut padded);
        v.sort_unstable();
        prop_assert_eq!(&padded[..v.len()], &v.iter().map(|&x| x as u32).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn delete_matches_oracle((keys, heights) in towers(80), mask in prop::collection::vec(any::<bool>(), 80)) {
        let l = SkipList::oracle_build(&keys, &heights).unwrap();
        let reds: BTreeSet<Key> = keys.iter().zip(&mask).filter(|(_, r)| **r).map(|(k, _)| Key::Id(*k)).collect();
        let mut got = l.clone();
        delete_phase(&mut got, &reds, &mut LocalFabric::new(), 0).unwrap();
        got.validate().unwrap();
        prop_assert_eq!(got, oracle_delete_all(&l, &reds));
    }

    #[test]
    fn merge_matches_oracle((keys, heights) in towers(120), side in prop::collection::vec(any::<bool>(), 120)) {
        let (mut ck, mut ch, mut bk, mut bh) = (vec![], vec![], vec![], vec![]);
        for (i, (&k, &h)) in keys.iter().zip(&heights).enumerate() {
            if side[i] { bk.push(k); bh.push(h) } else { ck.push(k); ch.push(h) }
        }
        let clean = SkipList::oracle_build(&ck, &ch).unwrap();
        let buffer = SkipList::build_between(Key::BufNegInf, Key::BufPosInf, &bk, &bh).unwrap();
        let mut got = clean.clone();
        wave_merge(&mut got, &buffer, &mut LocalFabric::new(), 0).unwrap();
        got.validate().unwrap();
        prop_assert_eq!(got, oracle_merge(&clean, &buffer));
    }

    #[test]
    fn raised_buffers_are_valid((keys, heights) in towers(60)) {
        let input: Vec<(Key, u32)> = keys.iter().zip(&heights).map(|(&k, &h)| (Key::Id(k), h)).collect();
        let b = raise_levels(&input, &mut LocalFabric::new()).unwrap();
        b.validate().unwrap();
        prop_assert_eq!(b.ids().collect::<Vec<_>>(), keys);
    }

    #[test]
    fn rate_expressions_floor(n in 2usize..100_000, c in 1u32..50) {
        prop_assert_eq!(eval_rate(&c.to_string(), n).unwrap(), c as usize);
        prop_assert_eq!(eval_rate(&format!("n/{c}"), n).unwrap(), n / c as usize);
        prop_assert!(eval_rate("n/(10*log2(n)^2)", n).unwrap() <= n);
    }

    #[test]
    fn configs_round_trip(n in 16usize..5000, seeds in (any::<u32>(), any::<u32>()), cycles in 1u64..100, density in 0.0f64..1.0) {
        let cfg = RunConfig {
            n,
            seed_adv: seeds.0 as u64,
            seed_alg: seeds.1 as u64,
            churn_rate_expr: "n/(10*log2(n)^2)".into(),
            strategy: resilient_skiplist::adversary::Strategy::UniformRandom,
            horizon_cycles: cycles,
            query_density: density,
            p: 0.5,
            constants: Default::default(),
        };
        prop_assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
