//! Principal component projection.
//!
//! Small problems use a full thin SVD of the centered matrix. Large ones use a
//! seeded randomized range finder with power iterations followed by an exact
//! SVD of the reduced matrix. Component signs are fixed so that the
//! largest-magnitude loading of every component is positive.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::data::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::rng;

/// Exact SVD is used up to this many rows/columns on the smaller side.
const EXACT_LIMIT: usize = 600;
const OVERSAMPLE: usize = 20;
const POWER_ITERS: usize = 6;
const SKETCH_SEED: u64 = 0x5043_415f_534b_4554;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `k × d` loadings with orthonormal columns.
    pub components: Array2<f64>,
    /// Per-feature means subtracted before projection (length `k`).
    pub means: Array1<f64>,
    /// `n × d` projected data.
    pub projected: Array2<f64>,
    /// Variance captured by each component (descending).
    pub explained_variance: Vec<f64>,
    /// True when the input was passed through unchanged.
    pub bypassed: bool,
}

impl PcaProjection {
    pub fn dims(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Shape(format!(
                "PCA fitted on {} features, got {}",
                self.means.len(),
                x.ncols()
            )));
        }
        if self.bypassed {
            return Ok(x.to_owned());
        }
        Ok((&x - &self.means.view().insert_axis(Axis(0))).dot(&self.components))
    }

    /// Maps projected rows back to feature space.
    pub fn reconstruct(&self) -> Array2<f64> {
        if self.bypassed {
            return self.projected.clone();
        }
        self.projected.dot(&self.components.t()) + self.means.view().insert_axis(Axis(0))
    }
}

fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn orthonormalize(a: Array2<f64>) -> Array2<f64> {
    let qr = to_na(a.view()).qr();
    from_na(&qr.q())
}

/// Top right singular vectors (as columns) and singular values of `a`.
fn top_right_singular(a: ArrayView2<f64>, d: usize) -> (Array2<f64>, Vec<f64>) {
    let svd = to_na(a).svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| {
        svd.singular_values[q]
            .total_cmp(&svd.singular_values[p])
            .then(p.cmp(&q))
    });
    let d = d.min(order.len());
    let mut v = Array2::zeros((a.ncols(), d));
    let mut sv = Vec::with_capacity(d);
    for (c, &r) in order.iter().take(d).enumerate() {
        for j in 0..a.ncols() {
            v[[j, c]] = vt[(r, j)];
        }
        sv.push(svd.singular_values[r]);
    }
    (v, sv)
}

fn randomized_right_singular(xc: ArrayView2<f64>, d: usize) -> (Array2<f64>, Vec<f64>) {
    let (_, g) = xc.dim();
    let l = (d + OVERSAMPLE).min(g);
    let mut r = rng::seeded(SKETCH_SEED);
    let omega = Array2::from_shape_fn((g, l), |_| StandardNormal.sample(&mut r));
    let mut q = orthonormalize(xc.dot(&omega));
    for _ in 0..POWER_ITERS {
        let z = orthonormalize(xc.t().dot(&q));
        q = orthonormalize(xc.dot(&z));
    }
    let b = q.t().dot(&xc);
    top_right_singular(b.view(), d)
}

/// Projects the rows of `x` onto their top `d` principal components.
/// When `x` has no more than `d` columns the projection is bypassed.
pub fn pca_fit(x: ArrayView2<f64>, d: usize) -> Result<PcaProjection> {
    if d == 0 {
        return Err(Error::param("pca_dims", "must be at least 1"));
    }
    let (n, g) = x.dim();
    if n < 2 {
        return Err(Error::Shape(format!("PCA needs at least 2 rows, got {n}")));
    }
    if g <= d {
        return Ok(PcaProjection {
            components: Array2::eye(g),
            means: Array1::zeros(g),
            projected: x.to_owned(),
            explained_variance: Vec::new(),
            bypassed: true,
        });
    }
    let d = d.min(n);
    let means = x.mean_axis(Axis(0)).expect("n >= 2");
    let xc = &x - &means.view().insert_axis(Axis(0));
    let (mut components, singular) = if n.min(g) <= EXACT_LIMIT || d + OVERSAMPLE >= n.min(g) {
        top_right_singular(xc.view(), d)
    } else {
        randomized_right_singular(xc.view(), d)
    };
    for mut col in components.axis_iter_mut(Axis(1)) {
        let mut best = 0usize;
        for (j, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = j;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let projected = xc.dot(&components);
    let explained_variance = singular
        .iter()
        .map(|s| s * s / (n - 1) as f64)
        .collect();
    Ok(PcaProjection {
        components,
        means,
        projected,
        explained_variance,
        bypassed: false,
    })
}

pub fn pca_project(x: &ExpressionMatrix, d: usize) -> Result<PcaProjection> {
    match x.dense() {
        Some(view) => pca_fit(view, d),
        None => pca_fit(x.to_dense_array().view(), d),
    }
}

/// Total variance (sum of per-column sample variances).
pub fn total_variance(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 0.0;
    }
    x.axis_iter(Axis(1))
        .map(|c| {
            let m = c.sum() / n as f64;
            c.iter().map(|&v| (v - m) * (v - m)).sum::<f64>()
        })
        .sum::<f64>()
        / (n - 1) as f64
}

/// Max |⟨c_i, c_j⟩ − δ_ij| over component pairs.
pub fn orthonormality_error(components: ArrayView2<f64>) -> f64 {
    let gram = components.t().dot(&components);
    let d = gram.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[[i, j]] - target).abs());
        }
    }
    worst
}
