//! Exploratory data analysis exports: Pearson correlations and a 2-D PCA
//! projection, both emitted as CSV for external plotting.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub feature_names: Vec<String>,
    /// r[i][j]; `None` where either column is constant.
    pub values: Vec<Vec<Option<f64>>>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Pairwise Pearson correlation of all feature columns; with `include_label`
/// the class index (as a real) is appended as a final `label` column.
pub fn pearson_matrix(ds: &TabularDataset, include_label: bool) -> Result<CorrelationMatrix> {
    if ds.n() < 2 {
        return Err(Error::InvalidArgument(
            "pearson correlation needs at least 2 rows".into(),
        ));
    }
    let mut columns: Vec<Vec<f64>> = ds
        .rows
        .axis_iter(Axis(1))
        .map(|c| c.to_vec())
        .collect();
    let mut feature_names = ds.feature_names.clone();
    if include_label {
        columns.push(ds.labels.iter().map(|&l| l as f64).collect());
        feature_names.push("label".into());
    }
    let d = columns.len();
    let mut values = vec![vec![None; d]; d];
    for i in 0..d {
        for j in i..d {
            let r = if i == j {
                // Unit diagonal only when the column varies.
                pearson(&columns[i], &columns[j]).map(|_| 1.0)
            } else {
                pearson(&columns[i], &columns[j])
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        feature_names,
        values,
    })
}

impl CorrelationMatrix {
    /// CSV with a leading name column; undefined cells render empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in self.feature_names.iter().enumerate() {
            out.push_str(name);
            for v in &self.values[i] {
                out.push(',');
                if let Some(r) = v {
                    out.push_str(&format!("{r:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    /// n rows of (pc1, pc2) scores.
    pub coords: Vec<[f64; 2]>,
    /// Fraction of total variance captured by each component.
    pub explained: [f64; 2],
    /// Orthonormal loadings, one vector per component.
    pub components: [Vec<f64>; 2],
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

fn power_iteration(cov: &Array2<f64>, start: Array1<f64>) -> Result<(f64, Array1<f64>)> {
    let mut v = start;
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("zero start vector".into()));
    }
    v /= norm;
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = cov.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            // Vector in the null space: eigenvalue 0.
            return Ok((0.0, v));
        }
        w /= norm;
        // Fix orientation during iteration so convergence checks are stable.
        if w.dot(&v) < 0.0 {
            w = -w;
        }
        let next_lambda = w.dot(&cov.dot(&w));
        let delta = (&w - &v).iter().map(|d| d.abs()).fold(0.0, f64::max);
        v = w;
        if delta < POWER_TOL {
            return Ok((next_lambda, v));
        }
        lambda = next_lambda;
    }
    Err(Error::NoConvergence {
        max_iters: POWER_MAX_ITERS,
        residual: lambda,
    })
}

/// Top-2 principal components of the standardized feature matrix, by power
/// iteration with deflation. Component signs are fixed by making the
/// largest-magnitude loading positive.
pub fn pca_2d(ds: &TabularDataset) -> Result<Projection2D> {
    if ds.n() <= 2 {
        return Err(Error::InvalidArgument("pca needs more than 2 rows".into()));
    }
    if ds.d() < 2 {
        return Err(Error::InvalidArgument("pca needs at least 2 columns".into()));
    }
    let n = ds.n() as f64;
    let d = ds.d();
    // Standardize internally (constant columns become zeros).
    let mut x = ds.rows.clone();
    for mut col in x.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let denom = if std == 0.0 { 1.0 } else { std };
        col.mapv_inplace(|v| (v - mean) / denom);
    }
    let mut cov = x.t().dot(&x) / n;
    let total_var: f64 = (0..d).map(|i| cov[[i, i]]).sum();
    if total_var == 0.0 {
        return Err(Error::InvalidArgument(
            "pca undefined: all columns constant".into(),
        ));
    }

    let mut components: Vec<Array1<f64>> = Vec::with_capacity(2);
    let mut eigenvalues = [0.0; 2];
    for slot in 0..2 {
        // Deterministic start vector that is unlikely to be orthogonal to
        // the leading eigenvector.
        let start = Array1::from_shape_fn(d, |i| 1.0 + (i as f64 + 1.0).sqrt());
        let (lambda, mut v) = power_iteration(&cov, start)?;
        if slot == 1 && lambda <= total_var * 1e-12 {
            return Err(Error::InvalidArgument(
                "pca undefined: data has rank < 2".into(),
            ));
        }
        // Sign convention.
        let argmax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if v[argmax] < 0.0 {
            v = -v;
        }
        // Deflate.
        let outer = Array2::from_shape_fn((d, d), |(i, j)| v[i] * v[j]);
        cov = cov - lambda * &outer;
        eigenvalues[slot] = lambda.max(0.0);
        components.push(v);
    }

    let coords: Vec<[f64; 2]> = x
        .outer_iter()
        .map(|row| [row.dot(&components[0]), row.dot(&components[1])])
        .collect();
    Ok(Projection2D {
        coords,
        explained: [eigenvalues[0] / total_var, eigenvalues[1] / total_var],
        components: [components[0].to_vec(), components[1].to_vec()],
    })
}

impl Projection2D {
    pub fn to_csv(&self, labels: &[usize]) -> String {
        let mut out = String::from("pc1,pc2,label\n");
        for (c, l) in self.coords.iter().zip(labels) {
            out.push_str(&format!("{:.6},{:.6},{l}\n", c[0], c[1]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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
    fn correlation_diag_and_antisymmetry() {
        let rows = array![[1.0, -1.0], [2.0, -2.0], [5.0, -5.0]];
        let m = pearson_matrix(&ds(rows, vec![0, 1, 0]), false).unwrap();
        assert_abs_diff_eq!(m.values[0][0].unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.values[0][1].unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(m.values[0][1], m.values[1][0]);
    }

    #[test]
    fn correlation_constant_column_undefined() {
        let rows = array![[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]];
        let m = pearson_matrix(&ds(rows, vec![0, 1, 0]), false).unwrap();
        assert_eq!(m.values[0][1], None);
        assert_eq!(m.values[1][1], None); // even the diagonal is flagged
    }

    #[test]
    fn correlation_with_label_column() {
        let rows = array![[0.0], [1.0], [2.0], [3.0]];
        let m = pearson_matrix(&ds(rows, vec![0, 0, 1, 1]), true).unwrap();
        assert_eq!(m.feature_names, vec!["f0", "label"]);
        // Feature increases with the label: strong positive correlation.
        let r = m.values[0][1].unwrap();
        assert_abs_diff_eq!(r, (4.0f64 / 5.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn correlation_bounds_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = Array2::from_shape_fn((30, 5), |_| rng.gen::<f64>());
        let m = pearson_matrix(&ds(rows, vec![0; 30]), false).unwrap();
        for row in &m.values {
            for v in row.iter().flatten() {
                assert!(v.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn pca_line_captures_all_variance() {
        let rows = Array2::from_shape_fn((10, 2), |(i, j)| {
            let t = i as f64;
            if j == 0 {
                t
            } else {
                3.0 * t
            }
        });
        // Perfectly collinear columns: rank 1, so 2-component PCA is flagged.
        assert!(pca_2d(&ds(rows, vec![0; 10])).is_err());

        // Near-line: first component still dominates.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = Array2::from_shape_fn((50, 2), |(i, j)| {
            let t = i as f64;
            let noise = rng.gen::<f64>() * 1e-3;
            if j == 0 {
                t + noise
            } else {
                3.0 * t + noise
            }
        });
        let p = pca_2d(&ds(rows, vec![0; 50])).unwrap();
        assert!(p.explained[0] > 0.999);
    }

    #[test]
    fn pca_components_orthonormal_and_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = Array2::from_shape_fn((40, 6), |_| rng.gen::<f64>() * 10.0 - 5.0);
        let p = pca_2d(&ds(rows, vec![0; 40])).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert_abs_diff_eq!(dot(&p.components[0], &p.components[0]), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dot(&p.components[1], &p.components[1]), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dot(&p.components[0], &p.components[1]), 0.0, epsilon = 1e-8);
        for k in 0..2 {
            let mean = p.coords.iter().map(|c| c[k]).sum::<f64>() / 40.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        }
        // Explained variance ordered and in range.
        assert!(p.explained[0] >= p.explained[1]);
        assert!(p.explained[0] + p.explained[1] <= 1.0 + 1e-9);
    }

    #[test]
    fn pca_isotropic_cloud_splits_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = Array2::from_shape_fn((4000, 2), |_| rng.gen::<f64>() - 0.5);
        let p = pca_2d(&ds(rows, vec![0; 4000])).unwrap();
        assert!((p.explained[0] - 0.5).abs() < 0.05);
        assert!((p.explained[1] - 0.5).abs() < 0.05);
    }

    #[test]
    fn pca_invariant_under_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = Array2::from_shape_fn((25, 4), |_| rng.gen::<f64>());
        let base = ds(rows, vec![0; 25]);
        let perm: Vec<usize> = (0..25).rev().collect();
        let permuted = base.subset(&perm);
        let a = pca_2d(&base).unwrap();
        let b = pca_2d(&permuted).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            assert_abs_diff_eq!(a.coords[pi][0], b.coords[i][0], epsilon = 1e-6);
            assert_abs_diff_eq!(a.coords[pi][1], b.coords[i][1], epsilon = 1e-6);
        }
    }

    #[test]
    fn pca_two_component_reconstruction_not_worse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows = Array2::from_shape_fn((30, 5), |(_, j)| rng.gen::<f64>() * (j + 1) as f64);
        let base = ds(rows, vec![0; 30]);
        let p = pca_2d(&base).unwrap();
        // With standardized total variance d, residual after k components is
        // total - sum of captured; two components capture at least as much.
        assert!(p.explained[0] + p.explained[1] >= p.explained[0] - 1e-12);
        assert!(p.explained[1] >= -1e-12);
    }
}
