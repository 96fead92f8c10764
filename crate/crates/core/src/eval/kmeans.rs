//! k-means with k-means++ seeding and Lloyd iterations.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::ari::LabeledClustering;
use crate::error::{Error, Result};
use crate::linalg::pca::pca_fit;
use crate::rng::{stage_seed, seeded, Stage};

/// Features wider than this are reduced by PCA before clustering.
pub const CLUSTER_PCA_DIMS: usize = 50;
const MAX_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub clustering: LabeledClustering,
    pub centroids: Array2<f64>,
    pub wcss: f64,
    /// WCSS after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus<R: Rng>(x: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (d, r) in nearest.iter_mut().zip(x.rows()) {
            *d = d.min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

fn assign(x: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) -> bool {
    let mut changed = false;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, cen) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(row, cen);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
        dists[i] = best_d;
    }
    changed
}

/// Recomputes centroids as cluster means. An empty cluster takes the point
/// farthest from its own centroid, which then leaves its old cluster.
fn update(x: ArrayView2<f64>, k: usize, labels: &mut [usize], dists: &mut [f64]) -> Array2<f64> {
    let d = x.ncols();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] == 0 {
            let far = (0..labels.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
            }
        }
    }
    let mut sums = Array2::zeros((k, d));
    for (row, &l) in x.rows().into_iter().zip(labels.iter()) {
        let mut s = sums.row_mut(l);
        s += &row;
    }
    for (mut s, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            s /= c as f64;
        }
    }
    sums
}

fn lloyd<R: Rng>(x: ArrayView2<f64>, k: usize, rng: &mut R) -> (Vec<usize>, Array2<f64>, Vec<f64>) {
    let n = x.nrows();
    let mut centroids = plus_plus(x, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERS {
        let changed = assign(x, &centroids, &mut labels, &mut dists);
        history.push(dists.iter().sum());
        if !changed {
            break;
        }
        centroids = update(x, k, &mut labels, &mut dists);
    }
    (labels, centroids, history)
}

/// Runs k-means directly on the rows of `x` (no dimensionality reduction).
pub fn kmeans(x: ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if k > n {
        return Err(Error::param("k", format!("{k} clusters for {n} points")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("clustering features must be finite".into()));
    }
    let mut rng = seeded(stage_seed(seed, Stage::KMeans));
    let mut best: Option<(Vec<usize>, Array2<f64>, Vec<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(x, k, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => run.2.last() < b.2.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let (labels, centroids, history) = best.expect("at least one restart");
    let wcss = *history.last().expect("at least one assignment");
    Ok(KMeansResult {
        // Re-seeding keeps every cluster occupied unless points coincide.
        clustering: LabeledClustering::from_values(&labels),
        centroids,
        wcss,
        history,
    })
}

/// Projects to the top principal components when wider than
/// [`CLUSTER_PCA_DIMS`], then runs [`kmeans`].
pub fn kmeans_cluster(x: ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if x.ncols() > CLUSTER_PCA_DIMS && x.nrows() >= 2 {
        let p = pca_fit(x, CLUSTER_PCA_DIMS)?;
        return kmeans(p.projected.view(), k, seed, restarts);
    }
    kmeans(x, k, seed, restarts)
}

/// Row means of `x` for each label; used by tests and diagnostics.
pub fn cluster_means(x: ArrayView2<f64>, c: &LabeledClustering) -> Array2<f64> {
    let mut out = Array2::zeros((c.k(), x.ncols()));
    for (row, &l) in x.axis_iter(Axis(0)).zip(c.labels()) {
        let mut o = out.row_mut(l);
        o += &row;
    }
    for (mut o, s) in out.rows_mut().into_iter().zip(c.class_sizes()) {
        o /= s.max(1) as f64;
    }
    out
}
