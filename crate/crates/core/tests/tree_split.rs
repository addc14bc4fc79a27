use proptest::prelude::*;

use ttregret::instances::{default_tree_horizon, make_random_separated_instance, make_tree_instance};
use ttregret::task_set::{check_strong_reachability, find_tree_split, TaskSet};

const LAMBDA: f64 = 0.4;

fn check_split(ts: &TaskSet, subset: &[usize], beta: f64) -> Result<(), TestCaseError> {
    let Ok(split) = find_tree_split(ts, subset, LAMBDA, beta) else {
        return Ok(());
    };
    let cap = (beta * subset.len() as f64 + 1e-9).floor() as usize;
    prop_assert!(!split.d_plus.is_empty() && !split.d_minus.is_empty());
    prop_assert!(split.d_plus.len() <= cap && split.d_minus.len() <= cap);
    prop_assert!(split.d_plus.contains(&subset[0]));
    let mut union: Vec<usize> = split.d_plus.iter().chain(&split.d_minus).copied().collect();
    union.sort_unstable();
    let mut want = subset.to_vec();
    want.sort_unstable();
    prop_assert_eq!(union, want);
    let (s, a) = split.pair;
    let mut min_cross = f64::INFINITY;
    for &i in &split.d_plus {
        for &j in &split.d_minus {
            min_cross = min_cross.min(ts.pair_l1(i, j, s, a));
        }
    }
    prop_assert!(min_cross >= LAMBDA - 1e-9);
    prop_assert!((min_cross - split.gap).abs() < 1e-9);
    prop_assert!(check_strong_reachability(ts, subset, split.pair).unwrap());
    Ok(())
}

fn subset_of(m: usize, mask: u64) -> Vec<usize> {
    (0..m).filter(|i| mask >> i & 1 == 1).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn splits_of_planted_trees(seed in 0u64..1000, k in 2u32..4, beta in 0.5f64..0.9, mask in any::<u64>()) {
        let m = 1usize << k;
        let ts = make_tree_instance(m, 0.5, LAMBDA, default_tree_horizon(m), seed).unwrap().task_set;
        let subset = subset_of(m, mask);
        prop_assume!(subset.len() >= 2);
        check_split(&ts, &subset, beta)?;
    }

    #[test]
    fn splits_of_random_sets(seed in 0u64..1000, beta in 0.5f64..0.95, mask in any::<u64>()) {
        // Some draws cannot be made reachable; the generator reports those.
        let out = make_random_separated_instance(6, 5, 2, 24, LAMBDA, seed);
        prop_assume!(out.is_ok());
        let ts = out.unwrap().task_set;
        let subset = subset_of(6, mask);
        prop_assume!(subset.len() >= 2);
        check_split(&ts, &subset, beta)?;
    }
}

#[test]
fn singletons_are_rejected() {
    let ts = make_tree_instance(4, 0.5, LAMBDA, default_tree_horizon(4), 0).unwrap().task_set;
    assert!(find_tree_split(&ts, &[2], LAMBDA, 0.5).is_err());
}

#[test]
fn whole_planted_sets_split() {
    for m in [4, 8, 16] {
        let ts = make_tree_instance(m, 0.5, LAMBDA, default_tree_horizon(m), 7).unwrap().task_set;
        let all: Vec<usize> = (0..m).collect();
        let split = find_tree_split(&ts, &all, LAMBDA, 0.5).unwrap();
        assert_eq!(split.d_plus.len(), m / 2);
        check_split(&ts, &all, 0.5).unwrap();
    }
}
