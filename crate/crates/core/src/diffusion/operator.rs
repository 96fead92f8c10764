//! Affinity kernel, symmetrization, Markov normalization, and t-step diffusion.

use serde::{Deserialize, Serialize};

use super::knn::NeighborGraph;
use crate::data::{ExpressionMatrix, Values};
use crate::error::{Error, Result};
use crate::linalg::sparse::CsrMatrix;

/// Graph settings an operator was built with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    pub k: usize,
    pub k_max: usize,
    pub alpha: f64,
}

/// Row-stochastic transition matrix P and the number of walk steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOperator {
    pub transition: CsrMatrix,
    pub steps: usize,
    pub params: AffinityParams,
}

impl DiffusionOperator {
    pub fn n_spots(&self) -> usize {
        self.transition.nrows()
    }
}

/// `A_ij = exp(-‖z_i - z_j‖² / (2σ_i²))^α` for `j` in the neighbor list of `i`.
pub fn affinity_matrix(graph: &NeighborGraph, alpha: f64) -> Result<CsrMatrix> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    let n = graph.n_spots();
    let mut triplets = Vec::with_capacity(n * graph.k_max);
    for i in 0..n {
        let sigma = graph.bandwidths[i];
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidValue(format!(
                "bandwidth of spot {i} is {sigma}, must be positive"
            )));
        }
        for (&j, &d) in graph.neighbors[i].iter().zip(&graph.distances[i]) {
            let a = (-(d * d) / (2.0 * sigma * sigma)).exp().powf(alpha);
            triplets.push((i, j, a));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// `W = (A + Aᵀ) / 2`.
pub fn symmetrize(a: &CsrMatrix) -> Result<CsrMatrix> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "cannot symmetrize a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    a.add_scaled(&a.transpose(), 0.5)
}

/// `P = D⁻¹ W` with `D_ii = Σ_j W_ij`. Errors on the first zero row.
pub fn row_normalize(w: &CsrMatrix) -> Result<CsrMatrix> {
    let sums = w.row_sums();
    if let Some(row) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::IsolatedSpot { row, spot: None });
    }
    let inv: Vec<f64> = sums.iter().map(|&s| 1.0 / s).collect();
    Ok(w.scale_rows(&inv))
}

impl DiffusionOperator {
    pub fn from_affinity(w: &CsrMatrix, steps: usize, params: AffinityParams) -> Result<Self> {
        Ok(Self {
            transition: row_normalize(w)?,
            steps,
            params,
        })
    }
}

/// Applies `Pᵗ` to the dense rows of `x` through `t` sparse products.
pub fn diffuse(op: &DiffusionOperator, x: &ExpressionMatrix, parallel: bool) -> Result<ExpressionMatrix> {
    if op.n_spots() != x.n_spots() {
        return Err(Error::Shape(format!(
            "operator over {} spots applied to {} spots",
            op.n_spots(),
            x.n_spots()
        )));
    }
    if op.steps == 0 {
        return Ok(x.clone());
    }
    let mut cur = x.to_dense_array();
    for _ in 0..op.steps {
        cur = op.transition.mul_dense(cur.view(), parallel)?;
    }
    // Products of nonnegative weights and values stay nonnegative.
    Ok(x.with_values(Values::Dense(cur)))
}
