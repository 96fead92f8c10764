//! Cluster labelings and the adjusted Rand index.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Labels in `0..k` with every class present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledClustering {
    labels: Vec<usize>,
    k: usize,
}

impl LabeledClustering {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidValue(format!("label {missing} of 0..{k} is unused")));
        }
        Ok(Self { labels, k })
    }

    /// Relabels arbitrary values to `0..k` in order of first appearance.
    pub fn from_values<L: Eq + Hash + Clone>(values: &[L]) -> Self {
        let mut ids: HashMap<L, usize> = HashMap::new();
        let labels = values
            .iter()
            .map(|v| {
                let next = ids.len();
                *ids.entry(v.clone()).or_insert(next)
            })
            .collect();
        Self { labels, k: ids.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn pairs(x: u64) -> i128 {
    let x = i128::from(x);
    x * (x - 1) / 2
}

/// Adjusted Rand index from the contingency table, in exact integer
/// arithmetic up to the final division. Returns 1 when both labelings are
/// trivial and the index is undefined.
pub fn ari_from_labels<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    let n = a.len() as u64;
    let mut table: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: i128 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: i128 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: i128 = cols.values().map(|&c| pairs(c)).sum();
    let total = if n < 2 { 0 } else { pairs(n) };
    // Both sides scaled by 2·C(n,2) to stay integral.
    let num = 2 * (index * total - sum_a * sum_b);
    let den = (sum_a + sum_b) * total - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

pub fn adjusted_rand_index(a: &LabeledClustering, b: &LabeledClustering) -> Result<f64> {
    ari_from_labels(a.labels(), b.labels())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(ari_from_labels(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari_from_labels(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(ari_from_labels(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5);
        assert!(ari_from_labels(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn degenerate_is_one() {
        assert_eq!(ari_from_labels(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari_from_labels::<u8, u8>(&[], &[]).unwrap(), 1.0);
        assert_eq!(ari_from_labels(&[0, 1, 2], &[5, 6, 7]).unwrap(), 1.0);
    }

    #[test]
    fn clustering_validation() {
        assert!(LabeledClustering::new(vec![0, 2]).is_err());
        let c = LabeledClustering::new(vec![1, 0, 1]).unwrap();
        assert_eq!(c.k(), 2);
        assert_eq!(c.class_sizes(), vec![1, 2]);
        let v = LabeledClustering::from_values(&[-4i64, 9, -4]);
        assert_eq!(v.labels(), &[0, 1, 0]);
    }
}
