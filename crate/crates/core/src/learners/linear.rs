//! Ridge linear regression used as a thresholdable classifier.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    #[serde(with = "super::tensor_b64")]
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn raw(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: row.len(),
            });
        }
        Ok(self.bias + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>())
    }

    /// Raw output clamped to [0,1] so linear regression thresholds like the
    /// probabilistic families.
    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        Ok(self.raw(row)?.clamp(0.0, 1.0))
    }
}

/// Symmetric eigendecomposition by the cyclic Jacobi method. Small systems
/// only; returns (eigenvalues, column eigenvectors).
pub(crate) fn jacobi_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = Array1::from_shape_fn(n, |i| a[[i, i]]);
    (eigenvalues, v)
}

/// Solve the symmetric PSD system Ax = b through the pseudo-inverse, which
/// yields the minimum-norm solution when A is singular.
pub(crate) fn solve_psd_min_norm(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let (vals, vecs) = jacobi_eigen(a);
    let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max * 1e-12 * a.nrows() as f64;
    let mut x = Array1::zeros(b.len());
    for k in 0..vals.len() {
        if vals[k].abs() <= tol {
            continue;
        }
        let vk = vecs.column(k);
        let coef = vk.dot(b) / vals[k];
        x = x + coef * &vk.to_owned();
    }
    x
}

/// Closed-form ridge fit on 0/1 targets. The bias term is unpenalized; at
/// l2 = 0 a singular system falls back to the minimum-norm solution.
pub fn train_linear(ds: &TabularDataset, l2: f64) -> Result<LinearModel> {
    if l2 < 0.0 {
        return Err(Error::InvalidArgument(format!("l2 must be >= 0, got {l2}")));
    }
    let n = ds.n();
    let d = ds.d();
    // Augmented design [X | 1]; penalty skips the bias coordinate.
    let mut gram = Array2::zeros((d + 1, d + 1));
    let mut rhs = Array1::zeros(d + 1);
    for (row, &label) in ds.rows.outer_iter().zip(&ds.labels) {
        let y = label as f64;
        for i in 0..d {
            for j in 0..d {
                gram[[i, j]] += row[i] * row[j];
            }
            gram[[i, d]] += row[i];
            gram[[d, i]] += row[i];
            rhs[i] += row[i] * y;
        }
        rhs[d] += y;
    }
    gram[[d, d]] = n as f64;
    for i in 0..d {
        gram[[i, i]] += l2;
    }
    let theta = solve_psd_min_norm(&gram, &rhs);
    Ok(LinearModel {
        weights: theta.iter().take(d).copied().collect(),
        bias: theta[d],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ds(rows: Array2<f64>, labels: Vec<usize>) -> TabularDataset {
        let d = rows.ncols();
        TabularDataset::new(
            (0..d).map(|j| format!("f{j}")).collect(),
            rows,
            labels,
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn exact_fit_without_regularization() {
        // y = x/4 on x in {0,2,4}: labels 0,0.5? labels are 0/1, so use
        // y = x/4 at x in {0,4} plus a repeat for conditioning.
        let train = ds(array![[0.0], [4.0], [0.0], [4.0]], vec![0, 1, 0, 1]);
        let m = train_linear(&train, 0.0).unwrap();
        assert_abs_diff_eq!(m.weights[0], 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(m.bias, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_target_gives_bias_only() {
        let train = ds(array![[1.0], [2.0], [3.0]], vec![1, 1, 1]);
        let m = train_linear(&train, 0.0).unwrap();
        assert_abs_diff_eq!(m.weights[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.bias, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn heavy_regularization_shrinks_weights_not_bias() {
        let train = ds(array![[0.0], [4.0]], vec![0, 1]);
        let m = train_linear(&train, 1e9).unwrap();
        assert!(m.weights[0].abs() < 1e-6);
        assert_abs_diff_eq!(m.bias, 0.5, epsilon = 1e-4); // mean target
    }

    #[test]
    fn duplicate_columns_get_min_norm_solution() {
        // Two identical columns: infinitely many exact fits; the minimum-norm
        // one splits the weight evenly.
        let train = ds(
            array![[0.0, 0.0], [4.0, 4.0], [2.0, 2.0], [0.0, 0.0]],
            vec![0, 1, 1, 0],
        );
        let m = train_linear(&train, 0.0).unwrap();
        assert_abs_diff_eq!(m.weights[0], m.weights[1], epsilon = 1e-8);
        for (row, want) in [([0.0, 0.0], m.raw(&[0.0, 0.0]).unwrap()), ([4.0, 4.0], m.raw(&[4.0, 4.0]).unwrap())] {
            let _ = (row, want);
        }
    }

    #[test]
    fn score_is_clamped() {
        let m = LinearModel {
            weights: vec![10.0],
            bias: 0.0,
        };
        assert_eq!(m.predict_score(&[5.0]).unwrap(), 1.0);
        assert_eq!(m.predict_score(&[-5.0]).unwrap(), 0.0);
    }
}
