mod common;

use common::{brute_force_neighbors, matmul, max_abs_diff, random_matrix, rng};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use spmagic::data::ExpressionMatrix;
use spmagic::diffusion::{
    affinity_matrix, build_knn_graph, diffuse, magic_impute, symmetrize, AffinityParams, DiffusionConfig,
    DiffusionOperator,
};
use spmagic::linalg::sparse::CsrMatrix;

struct Built {
    affinity: CsrMatrix,
    weights: CsrMatrix,
    op: DiffusionOperator,
}

fn build(z: &Array2<f64>, k: usize, k_max: usize, alpha: f64, steps: usize) -> Built {
    let graph = build_knn_graph(z.view(), k, k_max, true).unwrap();
    let affinity = affinity_matrix(&graph, alpha).unwrap();
    let weights = symmetrize(&affinity).unwrap();
    let op = DiffusionOperator::from_affinity(&weights, steps, AffinityParams { k, k_max, alpha }).unwrap();
    Built { affinity, weights, op }
}

fn dense_power_oracle(p: &Array2<f64>, x: &Array2<f64>, t: usize) -> Array2<f64> {
    (0..t).fold(x.clone(), |acc, _| matmul(p, &acc))
}

fn instance() -> impl Strategy<Value = (u64, usize, usize, usize, usize)> {
    (any::<u64>(), 8usize..=200, 1usize..=10, 1usize..=6, 0usize..=4)
        .prop_map(|(seed, n, d, k, t)| (seed, n, d, k.min(n - 2), t))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn transition_is_row_stochastic_and_weights_symmetric((seed, n, d, k, t) in instance()) {
        let z = random_matrix(&mut rng(seed), n, d, -1.0, 1.0);
        let b = build(&z, k, 3 * k, 1.0, t);
        for (i, s) in b.op.transition.row_sums().iter().enumerate() {
            prop_assert!((s - 1.0).abs() <= 1e-9, "row {i} sums to {s}");
        }
        prop_assert!(b.op.transition.data().iter().all(|&v| v >= 0.0));
        for (i, j, v) in b.weights.iter() {
            prop_assert_eq!(v, b.weights.get(j, i));
        }
    }

    #[test]
    fn diffusion_matches_dense_power((seed, n, d, k, t) in instance()) {
        let n = n.min(50);
        let k = k.min(n - 2);
        let mut r = rng(seed);
        let z = random_matrix(&mut r, n, d, -1.0, 1.0);
        let x = random_matrix(&mut r, n, 7, 0.0, 5.0);
        let b = build(&z, k, 3 * k, 1.0, t);
        let out = diffuse(&b.op, &ExpressionMatrix::from_dense_anonymous(x.clone()).unwrap(), true).unwrap();
        let oracle = dense_power_oracle(&b.op.transition.to_dense(), &x, t);
        prop_assert!(max_abs_diff(&out.to_dense_array(), &oracle) <= 1e-8);
    }

    #[test]
    fn constant_columns_are_fixed_points((seed, n, d, k, t) in instance(), c in 0.0f64..10.0) {
        let z = random_matrix(&mut rng(seed), n, d, -1.0, 1.0);
        let b = build(&z, k, 3 * k, 1.0, t);
        let x = Array2::from_elem((n, 3), c);
        let out = diffuse(&b.op, &ExpressionMatrix::from_dense_anonymous(x.clone()).unwrap(), false).unwrap();
        prop_assert!(max_abs_diff(&out.to_dense_array(), &x) <= 1e-9 * c.max(1.0));
    }

    #[test]
    fn alpha_two_squares_affinity((seed, n, d, k, _t) in instance()) {
        let z = random_matrix(&mut rng(seed), n, d, -1.0, 1.0);
        let one = build(&z, k, 3 * k, 1.0, 1).affinity;
        let two = build(&z, k, 3 * k, 2.0, 1).affinity;
        for (i, j, a) in one.iter() {
            prop_assert!((a * a - two.get(i, j)).abs() <= 1e-14);
        }
        prop_assert!(two.nnz() <= one.nnz());
    }

    #[test]
    fn knn_lists_match_brute_force((seed, n, d, k, _t) in instance()) {
        let z = random_matrix(&mut rng(seed), n, d, -1.0, 1.0);
        let k_max = 3 * k;
        let graph = build_knn_graph(z.view(), k, k_max, true).unwrap();
        let oracle = brute_force_neighbors(z.view(), k_max.min(n - 1));
        for (i, expected) in oracle.iter().enumerate() {
            let want: Vec<usize> = expected.iter().map(|p| p.0).collect();
            prop_assert_eq!(&graph.neighbors[i], &want);
            for (got, (_, d)) in graph.distances[i].iter().zip(expected) {
                prop_assert!((got - d).abs() <= 1e-12);
            }
            let mut first_k: Vec<f64> = expected[..k].iter().map(|p| p.1).collect();
            first_k.sort_by(f64::total_cmp);
            let median = if k % 2 == 1 { first_k[k / 2] } else { 0.5 * (first_k[k / 2 - 1] + first_k[k / 2]) };
            prop_assert!((graph.bandwidths[i] - median).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_steps_is_identity() {
    let mut r = rng(11);
    let z = random_matrix(&mut r, 30, 4, 0.0, 1.0);
    let x = random_matrix(&mut r, 30, 5, 0.0, 3.0);
    let b = build(&z, 5, 15, 1.0, 0);
    let xm = ExpressionMatrix::from_dense_anonymous(x).unwrap();
    assert_eq!(diffuse(&b.op, &xm, true).unwrap(), xm);
}

#[test]
fn parallel_and_sequential_agree() {
    let mut r = rng(5);
    let x = random_matrix(&mut r, 150, 40, 0.0, 4.0);
    let xm = ExpressionMatrix::from_dense_anonymous(x).unwrap();
    let seq = DiffusionConfig {
        pca_dims: 10,
        deterministic: true,
        ..Default::default()
    };
    let par = DiffusionConfig {
        deterministic: false,
        ..seq
    };
    let a = magic_impute(&xm, &seq).unwrap().imputed.to_dense_array();
    let b = magic_impute(&xm, &par).unwrap().imputed.to_dense_array();
    assert!(max_abs_diff(&a, &b) <= 1e-9);
    assert_eq!(a, magic_impute(&xm, &seq).unwrap().imputed.to_dense_array());
}

#[test]
fn degree_weighted_column_sums_are_invariant() {
    // With W symmetric, the degree-weighted column sums dᵀX are invariant under P.
    let mut r = rng(21);
    let z = random_matrix(&mut r, 60, 3, -2.0, 2.0);
    let x = random_matrix(&mut r, 60, 4, 0.0, 2.0);
    let b = build(&z, 5, 15, 1.0, 3);
    let degree = ndarray::Array1::from(b.weights.row_sums());
    let out = diffuse(&b.op, &ExpressionMatrix::from_dense_anonymous(x.clone()).unwrap(), true)
        .unwrap()
        .to_dense_array();
    let before = degree.dot(&x);
    let after = degree.dot(&out);
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
    assert!(out.sum_axis(Axis(1)).iter().all(|v| v.is_finite()));
}
