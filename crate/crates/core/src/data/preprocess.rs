//! Library-size normalization, log transform, highly-variable-gene selection,
//! and densification.

use ndarray::Axis;

use super::{ExpressionMatrix, Values};
use crate::error::{Error, Result};

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Scales every spot to the median library size. Returns the normalized
/// matrix and the target total.
pub fn library_size_normalize_with_target(x: &ExpressionMatrix) -> Result<(ExpressionMatrix, f64)> {
    let sums = x.row_sums();
    if sums.is_empty() {
        return Err(Error::Shape("cannot normalize a matrix with no spots".into()));
    }
    if let Some(row) = sums.iter().position(|&s| s <= 0.0) {
        return Err(Error::ZeroRowSum {
            row,
            spot: x.spot_ids()[row].clone(),
        });
    }
    let target = median(&mut sums.clone());
    let factors: Vec<f64> = sums.iter().map(|&s| target / s).collect();
    let values = match x.values() {
        Values::Dense(a) => {
            let mut out = a.clone();
            for (mut row, &f) in out.axis_iter_mut(Axis(0)).zip(&factors) {
                row.mapv_inplace(|v| v * f);
            }
            Values::Dense(out)
        }
        Values::Sparse(s) => Values::Sparse(s.scale_rows(&factors)),
    };
    Ok((x.with_values(values), target))
}

pub fn library_size_normalize(x: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    library_size_normalize_with_target(x).map(|(m, _)| m)
}

/// Entrywise `ln(1 + x)`; zeros stay zero so sparsity is preserved.
pub fn log1p_transform(x: &ExpressionMatrix) -> ExpressionMatrix {
    let values = match x.values() {
        Values::Dense(a) => Values::Dense(a.mapv(f64::ln_1p)),
        Values::Sparse(s) => Values::Sparse(s.map_values(f64::ln_1p)),
    };
    x.with_values(values)
}

/// Per-gene sample variance across spots (0 when there is a single spot).
pub fn gene_variances(x: &ExpressionMatrix) -> Vec<f64> {
    let (n, g) = x.shape();
    if n < 2 {
        return vec![0.0; g];
    }
    match x.values() {
        Values::Dense(a) => a
            .axis_iter(Axis(1))
            .map(|col| {
                let m = col.sum() / n as f64;
                col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
            })
            .collect(),
        Values::Sparse(s) => {
            let mut sum = vec![0.0; g];
            for (_, j, v) in s.iter() {
                sum[j] += v;
            }
            let mean: Vec<f64> = sum.iter().map(|&t| t / n as f64).collect();
            let mut ss = vec![0.0; g];
            let mut nnz = vec![0usize; g];
            for (_, j, v) in s.iter() {
                ss[j] += (v - mean[j]) * (v - mean[j]);
                nnz[j] += 1;
            }
            // Implicit zeros each contribute mean².
            (0..g)
                .map(|j| (ss[j] + (n - nnz[j]) as f64 * mean[j] * mean[j]) / (n - 1) as f64)
                .collect()
        }
    }
}

/// Column indices of the `k` highest-variance genes, ordered by decreasing
/// variance with ties broken by original column index.
pub fn hvg_order(x: &ExpressionMatrix, k: usize) -> Result<Vec<usize>> {
    let g = x.n_genes();
    if k > g {
        return Err(Error::param(
            "hvg_count",
            format!("cannot select {k} genes from {g}"),
        ));
    }
    let var = gene_variances(x);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Keeps the `k` most variable genes, in variance-rank order.
pub fn select_hvg(x: &ExpressionMatrix, k: usize) -> Result<ExpressionMatrix> {
    let order = hvg_order(x, k)?;
    x.select_genes(&order)
}

pub fn densify(x: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    match x.values() {
        Values::Dense(_) => Ok(x.clone()),
        Values::Sparse(s) => {
            let (n, g) = s.shape();
            let bytes = n
                .checked_mul(g)
                .and_then(|c| c.checked_mul(std::mem::size_of::<f64>()))
                .ok_or_else(|| Error::Resource(format!("dense {n}x{g} matrix overflows usize")))?;
            if bytes > isize::MAX as usize {
                return Err(Error::Resource(format!("dense {n}x{g} matrix too large")));
            }
            Ok(x.with_values(Values::Dense(s.to_dense())))
        }
    }
}

/// Output of the preprocessing chain.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// Dense HVG matrix of normalized, log-transformed values.
    pub matrix: ExpressionMatrix,
    pub normalization_target: f64,
}

/// normalize → log1p → select_hvg → densify. `hvg_count` is clamped to the
/// number of genes available.
pub fn preprocess(x: &ExpressionMatrix, hvg_count: usize) -> Result<Preprocessed> {
    let (normalized, target) = library_size_normalize_with_target(x)?;
    let logged = log1p_transform(&normalized);
    let hvg = select_hvg(&logged, hvg_count.min(logged.n_genes()))?;
    Ok(Preprocessed {
        matrix: densify(&hvg)?,
        normalization_target: target,
    })
}
