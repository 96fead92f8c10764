mod common;

use common::{random_matrix, rng};
use proptest::prelude::*;
use rand::Rng;
use spmagic::data::io::{read_expression, write_expression_csv, write_expression_mtx, ExprFormat};
use spmagic::data::preprocess::{densify, library_size_normalize, log1p_transform, select_hvg};
use spmagic::data::{default_ids, ExpressionMatrix};
use spmagic::linalg::sparse::CsrMatrix;

fn sparse_matrix(r: &mut impl Rng, rows: usize, cols: usize, density: f64) -> (CsrMatrix, Vec<f64>) {
    let mut triplets = Vec::new();
    let mut sums = vec![0.0; cols];
    for i in 0..rows {
        for (j, sum) in sums.iter_mut().enumerate() {
            if r.random::<f64>() < density {
                let v = r.random_range(1..20) as f64;
                triplets.push((i, j, v));
                *sum += v;
            }
        }
    }
    (CsrMatrix::from_triplets(rows, cols, triplets).unwrap(), sums)
}

#[test]
fn matrix_market_equals_csv() {
    let mut r = rng(1);
    let (m, _) = sparse_matrix(&mut r, 40, 60, 0.05);
    let x = ExpressionMatrix::from_sparse(m, default_ids("spot", 40), default_ids("gene", 60)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let mtx = dir.path().join("matrix.mtx");
    write_expression_csv(&csv, &x).unwrap();
    write_expression_mtx(&mtx, &x).unwrap();
    let a = read_expression(&csv, ExprFormat::Csv).unwrap();
    let b = read_expression(&mtx, ExprFormat::MatrixMarket).unwrap();
    assert_eq!(a.to_dense_array(), b.to_dense_array());
    assert_eq!(a.gene_ids(), b.gene_ids());
    assert_eq!(a.spot_ids(), b.spot_ids());
}

#[test]
fn densify_keeps_column_sums() {
    let mut r = rng(2);
    let (m, sums) = sparse_matrix(&mut r, 1000, 3000, 0.15);
    let x = ExpressionMatrix::from_sparse(m, default_ids("spot", 1000), default_ids("gene", 3000)).unwrap();
    let d = densify(&x).unwrap();
    assert!(d.dense().is_some());
    for (a, b) in d.column_sums().iter().zip(&sums) {
        assert!((a - b).abs() <= 1e-9 * b.max(1.0));
    }
}

#[test]
fn hvg_picks_highest_variance_genes() {
    // Column j alternates between 0 and 2·sqrt(j), so its variance is j.
    let x = ndarray::Array2::from_shape_fn((6, 5), |(i, j)| if i % 2 == 0 { 0.0 } else { 2.0 * (j as f64).sqrt() });
    let x = ExpressionMatrix::from_dense(x, default_ids("s", 6), default_ids("g", 5)).unwrap();
    let top = select_hvg(&x, 2).unwrap();
    assert_eq!(top.gene_ids(), ["g_4", "g_3"]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalized_rows_share_the_median_total(seed in any::<u64>(), n in 1usize..30, g in 1usize..12) {
        let mut x = random_matrix(&mut rng(seed), n, g, 0.0, 10.0);
        x.column_mut(0).mapv_inplace(|v| v + 1.0);
        let totals: Vec<f64> = x.rows().into_iter().map(|r| r.sum()).collect();
        let mut sorted = totals.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        let m = ExpressionMatrix::from_dense_anonymous(x).unwrap();
        for s in library_size_normalize(&m).unwrap().row_sums() {
            prop_assert!((s - median).abs() <= 1e-9 * median);
        }
    }

    #[test]
    fn log1p_preserves_order(seed in any::<u64>()) {
        let x = random_matrix(&mut rng(seed), 8, 8, 0.0, 100.0);
        let y = log1p_transform(&ExpressionMatrix::from_dense_anonymous(x.clone()).unwrap()).to_dense_array();
        let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().copied().zip(y.iter().copied()).unzip();
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                if xs[i] < xs[j] {
                    prop_assert!(ys[i] < ys[j]);
                }
            }
        }
    }
}
