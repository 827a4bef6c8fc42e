//! Linear soft-margin SVM by primal subgradient descent, with a Platt-style
//! sigmoid calibration so scores land in [0,1].

use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    #[serde(with = "super::tensor_b64")]
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Calibration: score = sigmoid(a * margin + b).
    pub cal_a: f64,
    pub cal_b: f64,
}

impl SvmModel {
    pub fn margin(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: row.len(),
            });
        }
        Ok(self.bias + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>())
    }

    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        let m = self.margin(row)?;
        Ok(sigmoid(self.cal_a * m + self.cal_b))
    }
}

/// Hinge-loss objective C·Σ max(0, 1 − y·m) + ||w||²/2 with y in {−1, +1}.
pub fn train_linear_svm(ds: &TabularDataset, c: f64, iters: usize) -> Result<SvmModel> {
    if ds.label_names.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "linear svm needs binary labels, got {} classes",
            ds.label_names.len()
        )));
    }
    if c <= 0.0 {
        return Err(Error::InvalidArgument(format!("C must be > 0, got {c}")));
    }
    let n = ds.n() as f64;
    let d = ds.d();
    let ys: Vec<f64> = ds.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for t in 0..iters {
        let lr = 1.0 / (1.0 + t as f64);
        let mut gw: Vec<f64> = w.clone(); // gradient of ||w||²/2
        let mut gb = 0.0;
        for (row, &y) in ds.rows.outer_iter().zip(&ys) {
            let m = b + w.iter().zip(row.iter()).map(|(w, x)| w * x).sum::<f64>();
            if y * m < 1.0 {
                for (g, &x) in gw.iter_mut().zip(row.iter()) {
                    *g -= c * y * x / n;
                }
                gb -= c * y / n;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g;
        }
        b -= lr * gb;
    }

    // Platt scaling: 1-D logistic fit of labels against training margins.
    let margins: Vec<f64> = ds
        .rows
        .outer_iter()
        .map(|r| b + w.iter().zip(r.iter()).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    let (mut a, mut bb) = (1.0, 0.0);
    let mut lr = 0.5;
    let loss = |a: f64, bb: f64| -> f64 {
        margins
            .iter()
            .zip(&ds.labels)
            .map(|(&m, &l)| {
                let z = a * m + bb;
                z.max(0.0) - z * l as f64 + (-z.abs()).exp().ln_1p()
            })
            .sum::<f64>()
            / n
    };
    let mut prev = loss(a, bb);
    for _ in 0..300 {
        let mut ga = 0.0;
        let mut gb2 = 0.0;
        for (&m, &l) in margins.iter().zip(&ds.labels) {
            let err = sigmoid(a * m + bb) - l as f64;
            ga += err * m / n;
            gb2 += err / n;
        }
        loop {
            let (a2, b2) = (a - lr * ga, bb - lr * gb2);
            let l2 = loss(a2, b2);
            if l2 <= prev || lr < 1e-12 {
                a = a2;
                bb = b2;
                prev = l2;
                break;
            }
            lr *= 0.5;
        }
    }
    Ok(SvmModel {
        weights: w,
        bias: b,
        cal_a: a,
        cal_b: bb,
    })
}
