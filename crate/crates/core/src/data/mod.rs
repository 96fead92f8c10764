//! Dataset containers: expression matrices, spot coordinates, and labels.

pub mod io;
pub mod preprocess;

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    Dense(Array2<f64>),
    Sparse(CsrMatrix),
}

impl Values {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Values::Dense(a) => a.dim(),
            Values::Sparse(s) => s.shape(),
        }
    }
}

/// Spots × genes matrix of nonnegative, finite expression values.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    values: Values,
    spot_ids: Vec<String>,
    gene_ids: Vec<String>,
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidValue(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

fn check_entry(v: f64, i: usize, j: usize) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite entry at ({i}, {j})")));
    }
    if v < 0.0 {
        return Err(Error::InvalidValue(format!("negative entry {v} at ({i}, {j})")));
    }
    Ok(())
}

impl ExpressionMatrix {
    pub fn new(values: Values, spot_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        let (n, g) = values.shape();
        if spot_ids.len() != n || gene_ids.len() != g {
            return Err(Error::Shape(format!(
                "{n}x{g} matrix with {} spot ids and {} gene ids",
                spot_ids.len(),
                gene_ids.len()
            )));
        }
        check_unique(&spot_ids, "spot")?;
        check_unique(&gene_ids, "gene")?;
        match &values {
            Values::Dense(a) => {
                for ((i, j), &v) in a.indexed_iter() {
                    check_entry(v, i, j)?;
                }
            }
            Values::Sparse(s) => {
                for (i, j, v) in s.iter() {
                    check_entry(v, i, j)?;
                }
            }
        }
        Ok(Self {
            values,
            spot_ids,
            gene_ids,
        })
    }

    pub fn from_dense(values: Array2<f64>, spot_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        Self::new(Values::Dense(values), spot_ids, gene_ids)
    }

    pub fn from_sparse(values: CsrMatrix, spot_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        Self::new(Values::Sparse(values), spot_ids, gene_ids)
    }

    /// Dense matrix with generated ids `spot_0..` / `gene_0..`.
    pub fn from_dense_anonymous(values: Array2<f64>) -> Result<Self> {
        let (n, g) = values.dim();
        Self::from_dense(values, default_ids("spot", n), default_ids("gene", g))
    }

    /// Rebuilds a matrix with the same ids around new values, skipping the
    /// id checks (callers guarantee the values are valid and shaped alike).
    pub(crate) fn with_values(&self, values: Values) -> Self {
        debug_assert_eq!(values.shape(), self.shape());
        Self {
            values,
            spot_ids: self.spot_ids.clone(),
            gene_ids: self.gene_ids.clone(),
        }
    }

    pub fn n_spots(&self) -> usize {
        self.spot_ids.len()
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_spots(), self.n_genes())
    }

    pub fn layout(&self) -> Layout {
        match self.values {
            Values::Dense(_) => Layout::Dense,
            Values::Sparse(_) => Layout::Sparse,
        }
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn spot_ids(&self) -> &[String] {
        &self.spot_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    /// Borrowed dense values, if the layout is dense.
    pub fn dense(&self) -> Option<ArrayView2<'_, f64>> {
        match &self.values {
            Values::Dense(a) => Some(a.view()),
            Values::Sparse(_) => None,
        }
    }

    pub fn to_dense_array(&self) -> Array2<f64> {
        match &self.values {
            Values::Dense(a) => a.clone(),
            Values::Sparse(s) => s.to_dense(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        match &self.values {
            Values::Dense(a) => a.sum_axis(Axis(1)).to_vec(),
            Values::Sparse(s) => s.row_sums(),
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        match &self.values {
            Values::Dense(a) => a.sum_axis(Axis(0)).to_vec(),
            Values::Sparse(s) => {
                let mut sums = vec![0.0; s.ncols()];
                for (_, j, v) in s.iter() {
                    sums[j] += v;
                }
                sums
            }
        }
    }

    /// Fraction of entries equal to zero.
    pub fn zero_fraction(&self) -> f64 {
        let (n, g) = self.shape();
        if n * g == 0 {
            return 0.0;
        }
        let nonzero = match &self.values {
            Values::Dense(a) => a.iter().filter(|&&v| v != 0.0).count(),
            Values::Sparse(s) => s.data().iter().filter(|&&v| v != 0.0).count(),
        };
        1.0 - nonzero as f64 / (n * g) as f64
    }

    pub fn select_spots(&self, rows: &[usize]) -> Self {
        let values = match &self.values {
            Values::Dense(a) => Values::Dense(a.select(Axis(0), rows)),
            Values::Sparse(s) => Values::Sparse(s.select_rows(rows)),
        };
        Self {
            values,
            spot_ids: rows.iter().map(|&r| self.spot_ids[r].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
        }
    }

    pub fn select_genes(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.n_genes()) {
            return Err(Error::Shape(format!("gene column {bad} out of range")));
        }
        let values = match &self.values {
            Values::Dense(a) => Values::Dense(a.select(Axis(1), cols)),
            Values::Sparse(s) => Values::Sparse(s.select_columns(cols)?),
        };
        Ok(Self {
            values,
            spot_ids: self.spot_ids.clone(),
            gene_ids: cols.iter().map(|&c| self.gene_ids[c].clone()).collect(),
        })
    }
}

pub fn default_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Per-axis shift and scale mapping raw coordinates to zero mean, unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordScaler {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl CoordScaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 2],
            scale: [1.0; 2],
        }
    }

    pub fn fit(coords: &SpatialCoords) -> Self {
        let a = coords.values();
        let n = a.nrows().max(1) as f64;
        let mut mean = [0.0; 2];
        let mut scale = [1.0; 2];
        for axis in 0..2 {
            let col = a.column(axis);
            let m = col.sum() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[axis] = m;
            // Constant axes are only centered.
            scale[axis] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, coords: &SpatialCoords) -> SpatialCoords {
        let mut out = coords.values().to_owned();
        for axis in 0..2 {
            out.column_mut(axis)
                .mapv_inplace(|v| (v - self.mean[axis]) / self.scale[axis]);
        }
        SpatialCoords { coords: out }
    }
}

/// Spots × 2 matrix of finite physical positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCoords {
    coords: Array2<f64>,
}

impl SpatialCoords {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        if coords.ncols() != 2 {
            return Err(Error::Shape(format!(
                "coordinates need 2 columns, got {}",
                coords.ncols()
            )));
        }
        if let Some(((i, j), v)) = coords.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite coordinate {v} at ({i}, {j})"
            )));
        }
        Ok(Self { coords })
    }

    pub fn n_spots(&self) -> usize {
        self.coords.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn select_spots(&self, rows: &[usize]) -> Self {
        Self {
            coords: self.coords.select(Axis(0), rows),
        }
    }

    pub fn standardized(&self) -> (SpatialCoords, CoordScaler) {
        let scaler = CoordScaler::fit(self);
        (scaler.apply(self), scaler)
    }
}

/// Expression, coordinates, and optional ground-truth labels over the same spots.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub expression: ExpressionMatrix,
    pub coords: SpatialCoords,
    pub labels: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(expression: ExpressionMatrix, coords: SpatialCoords, labels: Option<Vec<i64>>) -> Result<Self> {
        let n = expression.n_spots();
        if coords.n_spots() != n {
            return Err(Error::Shape(format!(
                "{n} expression spots but {} coordinate rows",
                coords.n_spots()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{n} expression spots but {} labels", l.len())));
            }
        }
        Ok(Self {
            expression,
            coords,
            labels,
        })
    }

    pub fn n_spots(&self) -> usize {
        self.expression.n_spots()
    }

    pub fn select_spots(&self, rows: &[usize]) -> Self {
        Self {
            expression: self.expression.select_spots(rows),
            coords: self.coords.select_spots(rows),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
        }
    }

    /// Removes spots whose total expression is zero, logging each one.
    pub fn drop_empty_spots(self) -> Self {
        let sums = self.expression.row_sums();
        let keep: Vec<usize> = (0..sums.len()).filter(|&i| sums[i] > 0.0).collect();
        if keep.len() == sums.len() {
            return self;
        }
        for (i, _) in sums.iter().enumerate().filter(|(_, &s)| s <= 0.0) {
            log::warn!(
                "dropping spot `{}`: zero total expression",
                self.expression.spot_ids()[i]
            );
        }
        self.select_spots(&keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_negative_and_nan() {
        assert!(ExpressionMatrix::from_dense_anonymous(array![[1.0, -1.0]]).is_err());
        assert!(ExpressionMatrix::from_dense_anonymous(array![[f64::NAN, 1.0]]).is_err());
        assert!(ExpressionMatrix::from_dense_anonymous(array![[0.0, 1.0]]).is_ok());
    }

    #[test]
    fn rejects_duplicate_ids() {
        let r = ExpressionMatrix::from_dense(
            array![[1.0], [2.0]],
            vec!["a".into(), "a".into()],
            vec!["g".into()],
        );
        assert!(matches!(r, Err(Error::InvalidValue(_))));
    }

    #[test]
    fn scaler_standardizes() {
        let c = SpatialCoords::new(array![[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]]).unwrap();
        let (s, scaler) = c.standardized();
        assert_eq!(scaler.scale[1], 1.0);
        let x = s.values().column(0).to_owned();
        assert!((x.sum()).abs() < 1e-12);
        assert!((x.mapv(|v| v * v).sum() / 3.0 - 1.0).abs() < 1e-12);
        assert!(s.values().column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drop_empty_spots_keeps_alignment() {
        let e = ExpressionMatrix::from_dense_anonymous(array![[1.0], [0.0], [2.0]]).unwrap();
        let c = SpatialCoords::new(array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        let d = Dataset::new(e, c, Some(vec![5, 6, 7])).unwrap().drop_empty_spots();
        assert_eq!(d.n_spots(), 2);
        assert_eq!(d.labels, Some(vec![5, 7]));
        assert_eq!(d.expression.spot_ids(), &["spot_0".to_string(), "spot_2".to_string()]);
        assert_eq!(d.coords.values()[[1, 0]], 2.0);
    }
}
