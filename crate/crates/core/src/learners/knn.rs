//! k-nearest-neighbors with deterministic distance tie-breaking.

use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn train_knn(ds: &TabularDataset, k: usize) -> Result<KnnModel> {
    if k == 0 || k > ds.n() {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            ds.n()
        )));
    }
    Ok(KnnModel {
        k,
        rows: ds.rows.outer_iter().map(|r| r.to_vec()).collect(),
        labels: ds.labels.clone(),
    })
}

impl KnnModel {
    /// Fraction of the k nearest (Euclidean) training rows in class 1;
    /// distance ties break toward the lower training index.
    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        let d = self.rows[0].len();
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        let mut dists: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let sq: f64 = r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (sq, i)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let pos = dists[..self.k]
            .iter()
            .filter(|&&(_, i)| self.labels[i] == 1)
            .count();
        Ok(pos as f64 / self.k as f64)
    }
}
