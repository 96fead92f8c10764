mod common;

use common::{brute_force_ari, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use spmagic::eval::{adjusted_rand_index, ari_from_labels, kmeans, LabeledClustering};

/// Every labeling of `n` items with values below `k`.
fn all_labelings(n: usize, k: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Labelings in first-appearance form, one per partition into at most `k` blocks.
fn canonical_labelings(n: usize, k: i64) -> Vec<Vec<i64>> {
    all_labelings(n, k)
        .into_iter()
        .filter(|l| {
            let mut next = 0;
            l.iter().all(|&v| {
                if v == next {
                    next += 1;
                    true
                } else {
                    v < next
                }
            })
        })
        .collect()
}

#[test]
fn exhaustive_small_labelings_match_pair_counting() {
    for n in 1..=5 {
        let all = all_labelings(n, 3);
        for a in &all {
            for b in &all {
                let got = ari_from_labels(a, b).unwrap();
                assert!((got - brute_force_ari(a, b)).abs() <= 1e-12, "{a:?} {b:?}");
            }
        }
    }
    for n in 6..=8 {
        let all = canonical_labelings(n, 3);
        for a in &all {
            for b in &all {
                let got = ari_from_labels(a, b).unwrap();
                assert!((got - brute_force_ari(a, b)).abs() <= 1e-12, "{a:?} {b:?}");
            }
        }
    }
}

#[test]
fn hand_values() {
    assert_eq!(ari_from_labels(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5);
    assert_eq!(ari_from_labels(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(ari_from_labels(&["a", "a", "b"], &[7, 7, 9]).unwrap(), 1.0);
    assert!(ari_from_labels(&[0, 1], &[0]).is_err());
}

/// Pair counts (ss, sd, ds, dd) = (1, 3, 1, 5); contingency form
/// (1 - 0.8) / (3 - 0.8) = 1/11.
#[test]
fn frozen_uneven_case() {
    let a = [0, 0, 0, 1, 1];
    let b = [0, 0, 1, 1, 2];
    let want = 1.0 / 11.0;
    assert!((ari_from_labels(&a, &b).unwrap() - want).abs() <= 1e-15);
    assert!((brute_force_ari(&a, &b) - want).abs() <= 1e-15);
}

fn labels(max_n: usize) -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
    (2usize..=max_n).prop_flat_map(|n| {
        (
            proptest::collection::vec(0i64..5, n),
            proptest::collection::vec(0i64..5, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn symmetric_and_permutation_invariant((a, b) in labels(40), seed in any::<u64>()) {
        let ab = ari_from_labels(&a, &b).unwrap();
        prop_assert!((ab - ari_from_labels(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!((ab - brute_force_ari(&a, &b)).abs() <= 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);

        let mut order: Vec<usize> = (0..a.len()).collect();
        order.shuffle(&mut rng(seed));
        let pa: Vec<i64> = order.iter().map(|&i| a[i]).collect();
        let pb: Vec<i64> = order.iter().map(|&i| b[i]).collect();
        prop_assert!((ab - ari_from_labels(&pa, &pb).unwrap()).abs() <= 1e-12);

        let renamed: Vec<i64> = a.iter().map(|v| 100 - 3 * v).collect();
        prop_assert!((ab - ari_from_labels(&renamed, &b).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn random_labelings_center_on_zero() {
    let mut r = rng(3);
    let n = 2000;
    let mut total = 0.0;
    for _ in 0..20 {
        let a: Vec<i64> = (0..n).map(|_| r.random_range(0..4)).collect();
        let b: Vec<i64> = (0..n).map(|_| r.random_range(0..4)).collect();
        total += ari_from_labels(&a, &b).unwrap();
    }
    assert!((total / 20.0).abs() < 0.01);
}

#[test]
fn kmeans_agrees_with_itself_under_same_seed() {
    let x = common::random_matrix(&mut rng(8), 90, 6, 0.0, 1.0);
    let a = kmeans(x.view(), 4, 17, 3).unwrap();
    let b = kmeans(x.view(), 4, 17, 3).unwrap();
    assert_eq!(adjusted_rand_index(&a.clustering, &b.clustering).unwrap(), 1.0);
    assert_eq!(a.clustering.k(), 4);
    let sizes = LabeledClustering::from_values(a.clustering.labels()).class_sizes();
    assert_eq!(sizes.iter().sum::<usize>(), 90);
}
