//! Exact k-nearest-neighbor graph with adaptive per-spot bandwidths.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    /// Per spot, up to `k_max` neighbor indices ordered by distance.
    pub neighbors: Vec<Vec<usize>>,
    /// Euclidean distances matching `neighbors`.
    pub distances: Vec<Vec<f64>>,
    /// Adaptive kernel bandwidth σ_i per spot.
    pub bandwidths: Vec<f64>,
    pub k: usize,
    pub k_max: usize,
}

impl NeighborGraph {
    pub fn n_spots(&self) -> usize {
        self.neighbors.len()
    }
}

/// Euclidean distance accumulated in coordinate order.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// σ_i from the sorted neighbor distances. Falls back to the smallest
/// positive neighbor distance when the median is zero, and to 1 when every
/// neighbor coincides with the spot.
pub fn adaptive_bandwidth(sorted_distances: &[f64], k: usize) -> f64 {
    let k = k.min(sorted_distances.len());
    let sigma = median_sorted(&sorted_distances[..k]);
    if sigma > 0.0 {
        return sigma;
    }
    sorted_distances
        .iter()
        .copied()
        .find(|&d| d > 0.0)
        .unwrap_or(1.0)
}

fn neighbors_of(z: &ArrayView2<f64>, rows: &[&[f64]], i: usize, keep: usize) -> (Vec<usize>, Vec<f64>) {
    let n = z.nrows();
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| (euclidean(rows[i], rows[j]), j))
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if keep < cand.len() {
        cand.select_nth_unstable_by(keep - 1, by_dist);
        cand.truncate(keep);
    }
    cand.sort_by(by_dist);
    cand.into_iter().map(|(d, j)| (j, d)).unzip()
}

/// Builds the kNN graph over the rows of `z`. Each spot keeps
/// `min(k_max, n - 1)` nearest neighbors (ties broken by index); σ_i is the
/// median distance to its `k` nearest.
pub fn build_knn_graph(z: ArrayView2<f64>, k: usize, k_max: usize, parallel: bool) -> Result<NeighborGraph> {
    let n = z.nrows();
    if k == 0 {
        return Err(Error::param("knn_k", "must be at least 1"));
    }
    if k_max < k {
        return Err(Error::param("knn_max", format!("{k_max} is smaller than knn_k = {k}")));
    }
    if n <= k {
        return Err(Error::param(
            "knn_k",
            format!("need more than {k} spots for {k} neighbors, got {n}"),
        ));
    }
    let keep = k_max.min(n - 1);
    let owned;
    let flat: &[f64] = match z.as_slice() {
        Some(s) => s,
        None => {
            owned = z.iter().copied().collect::<Vec<f64>>();
            &owned
        }
    };
    let d = z.ncols();
    let rows: Vec<&[f64]> = if d == 0 {
        vec![&[][..]; n]
    } else {
        flat.chunks(d).collect()
    };
    let lists: Vec<(Vec<usize>, Vec<f64>)> = if parallel {
        (0..n)
            .into_par_iter()
            .map(|i| neighbors_of(&z, &rows, i, keep))
            .collect()
    } else {
        (0..n).map(|i| neighbors_of(&z, &rows, i, keep)).collect()
    };
    let (neighbors, distances): (Vec<_>, Vec<_>) = lists.into_iter().unzip();
    let bandwidths = distances.iter().map(|d| adaptive_bandwidth(d, k)).collect();
    Ok(NeighborGraph {
        neighbors,
        distances,
        bandwidths,
        k,
        k_max,
    })
}
