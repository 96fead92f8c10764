//! Graph diffusion: PCA → kNN graph → adaptive Gaussian affinities →
//! symmetrized Markov operator → `Pᵗ X`.

pub mod knn;
pub mod operator;

use serde::{Deserialize, Serialize};

pub use knn::{build_knn_graph, NeighborGraph};
pub use operator::{affinity_matrix, diffuse, row_normalize, symmetrize, AffinityParams, DiffusionOperator};

use crate::data::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::linalg::pca::{pca_project, PcaProjection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub pca_dims: usize,
    pub k: usize,
    pub k_max: usize,
    pub alpha: f64,
    pub steps: usize,
    pub deterministic: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            pca_dims: 100,
            k: 5,
            k_max: 15,
            alpha: 1.0,
            steps: 3,
            deterministic: false,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pca_dims == 0 {
            return Err(Error::param("pca_dims", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::param("knn_k", "must be at least 1"));
        }
        if self.k_max < self.k {
            return Err(Error::param("knn_max", "must be at least knn_k"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::param("alpha", "must be a positive number"));
        }
        Ok(())
    }

    pub fn affinity_params(&self) -> AffinityParams {
        AffinityParams {
            k: self.k,
            k_max: self.k_max,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MagicOutput {
    pub imputed: ExpressionMatrix,
    pub operator: DiffusionOperator,
    pub pca: PcaProjection,
    pub graph: NeighborGraph,
}

/// Builds the diffusion operator from the dense HVG matrix.
pub fn build_operator(x_d: &ExpressionMatrix, cfg: &DiffusionConfig) -> Result<(DiffusionOperator, PcaProjection, NeighborGraph)> {
    cfg.validate()?;
    let pca = pca_project(x_d, cfg.pca_dims)?;
    let graph = build_knn_graph(pca.projected.view(), cfg.k, cfg.k_max, !cfg.deterministic)?;
    let a = affinity_matrix(&graph, cfg.alpha)?;
    let w = symmetrize(&a)?;
    let op = DiffusionOperator::from_affinity(&w, cfg.steps, cfg.affinity_params()).map_err(|e| match e {
        Error::IsolatedSpot { row, .. } => Error::IsolatedSpot {
            row,
            spot: x_d.spot_ids().get(row).cloned(),
        },
        other => other,
    })?;
    Ok((op, pca, graph))
}

/// Runs the full diffusion stage and returns `X_MAGIC = Pᵗ X_d`.
pub fn magic_impute(x_d: &ExpressionMatrix, cfg: &DiffusionConfig) -> Result<MagicOutput> {
    let (operator, pca, graph) = build_operator(x_d, cfg)?;
    let imputed = diffuse(&operator, x_d, !cfg.deterministic)?;
    Ok(MagicOutput {
        imputed,
        operator,
        pca,
        graph,
    })
}
