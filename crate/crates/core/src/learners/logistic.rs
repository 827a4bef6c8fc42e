//! Logistic regression by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    #[serde(with = "super::tensor_b64")]
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: row.len(),
            });
        }
        let z = self.bias + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
        Ok(sigmoid(z))
    }
}

fn reg_log_loss(ds: &TabularDataset, w: &[f64], b: f64, l2: f64) -> f64 {
    let n = ds.n() as f64;
    let mut loss = 0.0;
    for (row, &label) in ds.rows.outer_iter().zip(&ds.labels) {
        let z = b + w.iter().zip(row.iter()).map(|(w, x)| w * x).sum::<f64>();
        let y = label as f64;
        // Numerically stable BCE on the logit.
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    loss / n + 0.5 * l2 * w.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient descent on l2-regularized log loss (bias unpenalized). The step
/// size halves whenever a step would increase the loss, so the recorded loss
/// sequence is non-increasing.
pub fn train_logistic(ds: &TabularDataset, lr: f64, iters: usize, l2: f64) -> Result<LogisticModel> {
    if ds.label_names.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "logistic regression needs binary labels, got {} classes",
            ds.label_names.len()
        )));
    }
    if lr <= 0.0 {
        return Err(Error::InvalidArgument(format!("lr must be > 0, got {lr}")));
    }
    let n = ds.n() as f64;
    let d = ds.d();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut lr = lr;
    let mut loss = reg_log_loss(ds, &w, b, l2);
    for _ in 0..iters {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &label) in ds.rows.outer_iter().zip(&ds.labels) {
            let z = b + w.iter().zip(row.iter()).map(|(w, x)| w * x).sum::<f64>();
            let err = sigmoid(z) - label as f64;
            for (g, &x) in gw.iter_mut().zip(row.iter()) {
                *g += err * x;
            }
            gb += err;
        }
        for (g, &wi) in gw.iter_mut().zip(w.iter()) {
            *g = *g / n + l2 * wi;
        }
        gb /= n;
        loop {
            let w2: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - lr * g).collect();
            let b2 = b - lr * gb;
            let loss2 = reg_log_loss(ds, &w2, b2, l2);
            if loss2 <= loss || lr < 1e-12 {
                w = w2;
                b = b2;
                loss = loss2;
                break;
            }
            lr *= 0.5;
        }
    }
    Ok(LogisticModel { weights: w, bias: b })
}
