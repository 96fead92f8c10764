//! Synthetic labeled spatial datasets with controllable dropout.
//!
//! Every cluster has a nonnegative gene archetype: shared log-normal baseline
//! rates, with a random subset of marker genes raised by a factor of
//! `1 + cluster_separation`. Spot values are the archetype of their cluster
//! scaled by a per-spot library factor and by independent log-normal noise
//! per entry, so they are strictly positive before dropout. Each entry is
//! then zeroed independently with probability `dropout_rate`.
//! Clusters occupy disjoint spatial regions.

use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::data::{default_ids, Dataset, ExpressionMatrix, SpatialCoords};
use crate::error::{Error, Result};
use crate::rng::{stage_rng, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialLayout {
    /// Clusters tile a grid of square cells.
    Blocks,
    /// Clusters are vertical bands side by side.
    Stripes,
}

impl FromStr for SpatialLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blocks" => Ok(Self::Blocks),
            "stripes" => Ok(Self::Stripes),
            other => Err(Error::param("layout", format!("expected `blocks` or `stripes`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_spots: usize,
    pub n_genes: usize,
    pub n_clusters: usize,
    pub cluster_separation: f64,
    pub dropout_rate: f64,
    pub spatial_layout: SpatialLayout,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_spots: 600,
            n_genes: 100,
            n_clusters: 3,
            cluster_separation: 1.0,
            dropout_rate: 0.5,
            spatial_layout: SpatialLayout::Blocks,
            seed: 0,
        }
    }
}

/// Side length of a layout cell and the margin kept free on each side.
pub const CELL_SIZE: f64 = 10.0;
const CELL_MARGIN: f64 = 0.5;
/// Fraction of genes that mark each cluster.
const MARKER_FRACTION: f64 = 0.3;
const LIBRARY_SIGMA: f64 = 0.25;
const NOISE_SIGMA: f64 = 0.5;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_spots == 0 {
            return Err(Error::param("n_spots", "must be at least 1"));
        }
        if self.n_genes == 0 {
            return Err(Error::param("n_genes", "must be at least 1"));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_spots {
            return Err(Error::param(
                "n_clusters",
                format!("must be in 1..={}, got {}", self.n_spots, self.n_clusters),
            ));
        }
        if !(self.cluster_separation >= 0.0) || !self.cluster_separation.is_finite() {
            return Err(Error::param("separation", "must be a nonnegative number"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::param("dropout", format!("must be in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    /// Lower-left corner of the cell of `cluster`.
    pub fn cell_origin(&self, cluster: usize) -> [f64; 2] {
        match self.spatial_layout {
            SpatialLayout::Blocks => {
                let cols = (self.n_clusters as f64).sqrt().ceil() as usize;
                [(cluster % cols) as f64 * CELL_SIZE, (cluster / cols) as f64 * CELL_SIZE]
            }
            SpatialLayout::Stripes => [cluster as f64 * CELL_SIZE, 0.0],
        }
    }

    fn cell_height(&self) -> f64 {
        match self.spatial_layout {
            SpatialLayout::Blocks => CELL_SIZE,
            SpatialLayout::Stripes => CELL_SIZE * self.n_clusters as f64,
        }
    }
}

/// Cluster archetypes (clusters × genes).
pub fn archetypes<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Array2<f64> {
    let base = LogNormal::new(0.5, 0.6).expect("valid parameters");
    let baseline: Vec<f64> = (0..spec.n_genes).map(|_| base.sample(rng)).collect();
    let mut out = Array2::zeros((spec.n_clusters, spec.n_genes));
    for mut row in out.rows_mut() {
        for (v, &b) in row.iter_mut().zip(&baseline) {
            let marker = rng.random::<f64>() < MARKER_FRACTION;
            *v = if marker { b * (1.0 + spec.cluster_separation) } else { b };
        }
    }
    out
}

/// Generates a labeled dataset. A spot whose every entry dropped out keeps
/// its strongest archetype gene at value 1 so that it survives library-size
/// normalization.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stage_rng(spec.seed, Stage::Synthetic);
    let arche = archetypes(spec, &mut rng);
    let (n, g, c) = (spec.n_spots, spec.n_genes, spec.n_clusters);

    let mut labels: Vec<usize> = (0..n).map(|i| i * c / n).collect();
    labels.shuffle(&mut rng);

    let height = spec.cell_height();
    let mut coords = Array2::zeros((n, 2));
    for (i, &l) in labels.iter().enumerate() {
        let o = spec.cell_origin(l);
        coords[[i, 0]] = o[0] + rng.random_range(CELL_MARGIN..CELL_SIZE - CELL_MARGIN);
        coords[[i, 1]] = o[1] + rng.random_range(CELL_MARGIN..height - CELL_MARGIN);
    }

    let library = LogNormal::new(0.0, LIBRARY_SIGMA).expect("valid parameters");
    let noise = LogNormal::new(-0.5 * NOISE_SIGMA * NOISE_SIGMA, NOISE_SIGMA).expect("valid parameters");
    let mut counts = Array2::zeros((n, g));
    for (i, &l) in labels.iter().enumerate() {
        let factor: f64 = library.sample(&mut rng);
        for j in 0..g {
            let v = arche[[l, j]] * factor * noise.sample(&mut rng);
            counts[[i, j]] = if rng.random::<f64>() < spec.dropout_rate { 0.0 } else { v };
        }
        if counts.row(i).iter().all(|&v| v == 0.0) {
            let top = (0..g).max_by(|&a, &b| arche[[l, a]].total_cmp(&arche[[l, b]])).unwrap_or(0);
            counts[[i, top]] = 1.0;
        }
    }

    let expression = ExpressionMatrix::from_dense(counts, default_ids("spot", n), default_ids("gene", g))?;
    let coords = SpatialCoords::new(coords)?;
    Dataset::new(expression, coords, Some(labels.into_iter().map(|l| l as i64).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec {
            n_spots: 50,
            n_genes: 20,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a, generate_synthetic(&spec).unwrap());
        assert_eq!(a.expression.shape(), (50, 20));
        assert!(a.expression.row_sums().iter().all(|&s| s > 0.0));
        let labels = a.labels.as_ref().unwrap();
        for c in 0..3 {
            assert!(labels.contains(&c));
        }
    }

    #[test]
    fn dropout_fraction_matches_rate() {
        let spec = SyntheticSpec {
            n_spots: 500,
            n_genes: 200,
            dropout_rate: 0.9,
            ..Default::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        let z = d.expression.zero_fraction();
        let sigma = (0.9f64 * 0.1 / 1e5).sqrt();
        assert!((z - 0.9).abs() <= 3.0 * sigma, "{z}");
    }

    #[test]
    fn blocks_are_disjoint_boxes() {
        for layout in [SpatialLayout::Blocks, SpatialLayout::Stripes] {
            let spec = SyntheticSpec {
                n_spots: 200,
                n_genes: 10,
                n_clusters: 5,
                spatial_layout: layout,
                ..Default::default()
            };
            let d = generate_synthetic(&spec).unwrap();
            let labels = d.labels.unwrap();
            let xy = d.coords.values();
            let mut boxes = [[f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]; 5];
            for (i, &l) in labels.iter().enumerate() {
                let b = &mut boxes[l as usize];
                b[0] = b[0].min(xy[[i, 0]]);
                b[1] = b[1].min(xy[[i, 1]]);
                b[2] = b[2].max(xy[[i, 0]]);
                b[3] = b[3].max(xy[[i, 1]]);
            }
            for a in 0..5 {
                for b in a + 1..5 {
                    let (p, q) = (boxes[a], boxes[b]);
                    let overlap = p[0] <= q[2] && q[0] <= p[2] && p[1] <= q[3] && q[1] <= p[3];
                    assert!(!overlap, "{layout:?}: clusters {a} and {b} overlap");
                }
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let bad = SyntheticSpec {
            dropout_rate: 1.0,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SyntheticSpec {
            n_clusters: 700,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!("rings".parse::<SpatialLayout>().is_err());
    }
}
