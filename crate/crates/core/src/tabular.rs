//! The four tabular enhancement techniques (scale, augment, expand,
//! polynomial) and the recipe that composes them for the DOE harness.

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{train_test_split, TabularDataset};
use crate::error::{Error, Result};

/// Whether augmentation runs before the train/test split (leaking synthetic
/// kin of training rows into the test set) or on the training partition only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeakageMode {
    PaperFaithful,
    #[default]
    LeakFree,
}

/// Selection of enhancement steps, applied in the fixed order
/// expand -> polynomial -> augment -> scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecipe {
    #[serde(default)]
    pub scale: bool,
    #[serde(default)]
    pub augment: bool,
    #[serde(default = "default_augment_degree")]
    pub augment_degree: usize,
    #[serde(default)]
    pub expand: bool,
    #[serde(default)]
    pub polynomial: bool,
    #[serde(default = "default_polynomial_degree")]
    pub polynomial_degree: usize,
    #[serde(default)]
    pub leakage_mode: LeakageMode,
}

fn default_augment_degree() -> usize {
    4
}

fn default_polynomial_degree() -> usize {
    2
}

impl Default for TransformRecipe {
    fn default() -> Self {
        TransformRecipe {
            scale: false,
            augment: false,
            augment_degree: default_augment_degree(),
            expand: false,
            polynomial: false,
            polynomial_degree: default_polynomial_degree(),
            leakage_mode: LeakageMode::default(),
        }
    }
}

impl TransformRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.augment && self.augment_degree < 2 {
            return Err(Error::InvalidArgument(format!(
                "augment degree must be >= 2, got {}",
                self.augment_degree
            )));
        }
        if self.polynomial && self.polynomial_degree != 2 {
            return Err(Error::InvalidArgument(format!(
                "polynomial degree is fixed at 2, got {}",
                self.polynomial_degree
            )));
        }
        Ok(())
    }

    /// Short human-readable cell label, `original` when nothing is enabled.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.scale {
            parts.push("scaled");
        }
        if self.expand {
            parts.push("expanded");
        }
        if self.augment {
            parts.push("augmented");
        }
        if self.polynomial {
            parts.push("polynomial");
        }
        if parts.is_empty() {
            "original".into()
        } else {
            parts.join("+")
        }
    }
}

/// Per-column standardization statistics fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScaler {
    pub means: Vec<f64>,
    /// Population (divisor n) standard deviations.
    pub stds: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

impl FittedScaler {
    pub fn fit(train: &TabularDataset) -> Self {
        let n = train.n() as f64;
        let mut means = Vec::with_capacity(train.d());
        let mut stds = Vec::with_capacity(train.d());
        let mut zero_variance = Vec::with_capacity(train.d());
        for col in train.rows.axis_iter(Axis(1)) {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            means.push(mean);
            stds.push(std);
            zero_variance.push(std == 0.0);
        }
        FittedScaler {
            means,
            stds,
            zero_variance,
        }
    }

    pub fn transform(&self, ds: &TabularDataset) -> Result<TabularDataset> {
        if ds.d() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got: ds.d(),
            });
        }
        let mut out = ds.clone();
        for (j, mut col) in out.rows.axis_iter_mut(Axis(1)).enumerate() {
            let denom = if self.zero_variance[j] { 1.0 } else { self.stds[j] };
            col.mapv_inplace(|v| (v - self.means[j]) / denom);
        }
        Ok(out)
    }

    pub fn inverse(&self, ds: &TabularDataset) -> Result<TabularDataset> {
        if ds.d() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got: ds.d(),
            });
        }
        let mut out = ds.clone();
        for (j, mut col) in out.rows.axis_iter_mut(Axis(1)).enumerate() {
            let denom = if self.zero_variance[j] { 1.0 } else { self.stds[j] };
            col.mapv_inplace(|v| v * denom + self.means[j]);
        }
        Ok(out)
    }
}

/// Standardize both sets with statistics fitted on `train` only.
pub fn scale(
    train: &TabularDataset,
    test: &TabularDataset,
) -> Result<(TabularDataset, TabularDataset, FittedScaler)> {
    if train.d() != test.d() {
        return Err(Error::DimensionMismatch {
            expected: train.d(),
            got: test.d(),
        });
    }
    let scaler = FittedScaler::fit(train);
    Ok((scaler.transform(train)?, scaler.transform(test)?, scaler))
}

const AUGMENT_RETRIES: usize = 100;

/// Grow the dataset to `degree` times its size with donor-copy synthesis:
/// each synthetic row takes feature j from a uniformly chosen same-class
/// donor's feature j. Originals come first; synthetic rows are kept distinct
/// from every prior row (up to a retry cap, after which the row is dropped).
pub fn augment(train: &TabularDataset, degree: usize, seed: u64) -> Result<TabularDataset> {
    if degree < 2 {
        return Err(Error::InvalidArgument(format!(
            "augment degree must be >= 2, got {degree}"
        )));
    }
    for (class, count) in train.class_counts().iter().enumerate() {
        if *count > 0 && *count < 2 {
            return Err(Error::DegenerateClass {
                class: train.label_names[class].clone(),
                count: *count,
                needed: 2,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = train.d();
    let mut rows: Vec<Vec<f64>> = train
        .rows
        .outer_iter()
        .map(|r| r.to_vec())
        .collect();
    let mut labels = train.labels.clone();
    let mut dropped = 0usize;
    for (class, members) in train.class_indices().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let want = members.len() * (degree - 1);
        'synth: for _ in 0..want {
            for _ in 0..AUGMENT_RETRIES {
                let mut row = vec![0.0; d];
                for (j, slot) in row.iter_mut().enumerate() {
                    let donor = members[rng.gen_range(0..members.len())];
                    *slot = train.rows[[donor, j]];
                }
                if !rows.contains(&row) {
                    rows.push(row);
                    labels.push(class);
                    continue 'synth;
                }
            }
            dropped += 1;
        }
    }
    if dropped > 0 {
        eprintln!("warning: augment dropped {dropped} rows after the uniqueness retry cap");
    }
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    TabularDataset::new(
        train.feature_names.clone(),
        Array2::from_shape_vec((n, d), flat).expect("shape"),
        labels,
        train.label_names.clone(),
    )
}

/// Row-wise moments (divisor n, about the row mean).
fn row_stats(row: ArrayView1<f64>) -> [f64; 7] {
    let d = row.len() as f64;
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = row.sum() / d;
    let mut sorted: Vec<f64> = row.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let m2 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    let m3 = row.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / d;
    let m4 = row.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / d;
    let std = m2.sqrt();
    // Degenerate rule: zero row variance gives skewness and kurtosis 0.
    let (skew, kurt) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    [min, max, mean, median, std, skew, kurt]
}

const EXPAND_NAMES: [&str; 7] = [
    "row_min", "row_max", "row_mean", "row_median", "row_std", "row_skew", "row_kurt",
];

/// Append seven row-statistic columns (min, max, mean, median, population
/// std, skewness g1, excess kurtosis g2) computed over the original columns.
pub fn expand(ds: &TabularDataset) -> Result<TabularDataset> {
    if ds.d() < 2 {
        return Err(Error::InvalidArgument(
            "expand needs at least 2 feature columns".into(),
        ));
    }
    let n = ds.n();
    let d = ds.d();
    let mut rows = Array2::zeros((n, d + 7));
    for (i, row) in ds.rows.outer_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            rows[[i, j]] = v;
        }
        for (j, v) in row_stats(row).into_iter().enumerate() {
            rows[[i, d + j]] = v;
        }
    }
    let mut feature_names = ds.feature_names.clone();
    feature_names.extend(EXPAND_NAMES.iter().map(|s| s.to_string()));
    TabularDataset::new(feature_names, rows, ds.labels.clone(), ds.label_names.clone())
}

/// Degree-2 polynomial features: originals, then all distinct pairwise
/// products, then all squares. For d columns the output has
/// 2d + d(d-1)/2 columns.
pub fn polynomial(ds: &TabularDataset, degree: usize) -> Result<TabularDataset> {
    if degree != 2 {
        return Err(Error::InvalidArgument(format!(
            "polynomial degree is fixed at 2, got {degree}"
        )));
    }
    let d = ds.d();
    let d_out = 2 * d + d * (d - 1) / 2;
    if d_out > 100_000 {
        return Err(Error::InvalidArgument(format!(
            "polynomial expansion would create {d_out} columns"
        )));
    }
    let n = ds.n();
    let mut rows = Array2::zeros((n, d_out));
    let mut feature_names = ds.feature_names.clone();
    for i in 0..d {
        for j in (i + 1)..d {
            feature_names.push(format!("{}*{}", ds.feature_names[i], ds.feature_names[j]));
        }
    }
    for i in 0..d {
        feature_names.push(format!("{0}*{0}", ds.feature_names[i]));
    }
    for (r, row) in ds.rows.outer_iter().enumerate() {
        let mut c = 0;
        for &v in row.iter() {
            rows[[r, c]] = v;
            c += 1;
        }
        for i in 0..d {
            for j in (i + 1)..d {
                rows[[r, c]] = row[i] * row[j];
                c += 1;
            }
        }
        for i in 0..d {
            rows[[r, c]] = row[i] * row[i];
            c += 1;
        }
    }
    TabularDataset::new(feature_names, rows, ds.labels.clone(), ds.label_names.clone())
}

/// Apply a recipe to a train/test pair in the fixed order
/// expand -> polynomial -> augment -> scale, fitting statistics on train.
///
/// In `paper_faithful` mode the two sets are pooled, enhanced, and re-split
/// at the original test fraction before scaling, reproducing an
/// enhancement-before-split protocol.
pub fn apply_recipe(
    train: &TabularDataset,
    test: &TabularDataset,
    recipe: &TransformRecipe,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    recipe.validate()?;
    let enhance_rowwise = |ds: &TabularDataset| -> Result<TabularDataset> {
        let mut ds = ds.clone();
        if recipe.expand {
            ds = expand(&ds)?;
        }
        if recipe.polynomial {
            ds = polynomial(&ds, recipe.polynomial_degree)?;
        }
        Ok(ds)
    };

    let (mut train, mut test) = match (recipe.leakage_mode, recipe.augment) {
        (LeakageMode::PaperFaithful, true) => {
            let test_fraction = test.n() as f64 / (train.n() + test.n()) as f64;
            let all_idx: Vec<usize> = (0..train.n()).chain(0..test.n()).collect();
            let mut pooled = train.clone();
            let _ = all_idx;
            // Concatenate rows and labels.
            pooled.rows = ndarray::concatenate(Axis(0), &[train.rows.view(), test.rows.view()])
                .expect("same width");
            pooled.labels.extend_from_slice(&test.labels);
            let pooled = enhance_rowwise(&pooled)?;
            let pooled = augment(&pooled, recipe.augment_degree, seed)?;
            train_test_split(&pooled, test_fraction, seed, true)?
        }
        _ => {
            let mut tr = enhance_rowwise(train)?;
            let te = enhance_rowwise(test)?;
            if recipe.augment {
                tr = augment(&tr, recipe.augment_degree, seed)?;
            }
            (tr, te)
        }
    };

    if recipe.scale {
        let (tr, te, _) = scale(&train, &test)?;
        train = tr;
        test = te;
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ds(rows: Array2<f64>, labels: Vec<usize>) -> TabularDataset {
        let d = rows.ncols();
        let names = (0..d).map(|j| format!("f{j}")).collect();
        let n_classes = labels.iter().max().unwrap() + 1;
        TabularDataset::new(
            names,
            rows,
            labels,
            (0..n_classes).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn scale_column_values() {
        let train = ds(array![[1.0], [2.0], [3.0]], vec![0, 0, 1]);
        let test = ds(array![[2.0]], vec![0]);
        let (tr, te, scaler) = scale(&train, &test).unwrap();
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(tr.rows[[0, 0]], -expected, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.rows[[1, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.rows[[2, 0]], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(te.rows[[0, 0]], 0.0, epsilon = 1e-12);
        assert!(!scaler.zero_variance[0]);
    }

    #[test]
    fn scale_constant_column() {
        let train = ds(array![[5.0], [5.0], [5.0]], vec![0, 0, 1]);
        let (tr, _, scaler) = scale(&train, &train).unwrap();
        assert!(tr.rows.iter().all(|&v| v == 0.0));
        assert!(scaler.zero_variance[0]);
    }

    #[test]
    fn scale_uses_train_statistics_on_test() {
        let train = ds(array![[0.0], [10.0]], vec![0, 1]);
        let test = ds(array![[10.0], [20.0]], vec![0, 1]);
        let (_, te, _) = scale(&train, &test).unwrap();
        // (10-5)/5 = 1, (20-5)/5 = 3: test is not standardized to its own stats.
        assert_abs_diff_eq!(te.rows[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(te.rows[[1, 0]], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn scale_inverse_round_trips() {
        let train = ds(array![[1.0, 9.0], [2.0, -4.0], [8.0, 0.5]], vec![0, 1, 0]);
        let (tr, _, scaler) = scale(&train, &train).unwrap();
        let back = scaler.inverse(&tr).unwrap();
        for (a, b) in back.rows.iter().zip(train.rows.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn augment_quadruples_and_keeps_marginals() {
        let rows = Array2::from_shape_fn((20, 3), |(i, j)| (i * 7 + j * 13) as f64);
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let train = ds(rows, labels);
        let out = augment(&train, 4, 11).unwrap();
        assert_eq!(out.n(), 80);
        // Originals preserved first.
        assert_eq!(out.rows.slice(ndarray::s![..20, ..]), train.rows);
        // Per-class marginal value sets preserved.
        for i in 20..out.n() {
            let class = out.labels[i];
            for j in 0..3 {
                let v = out.rows[[i, j]];
                let found = (0..20)
                    .any(|r| train.labels[r] == class && train.rows[[r, j]] == v);
                assert!(found, "value {v} not a class-{class} donor value");
            }
        }
        // Brute-force duplicate scan.
        for a in 0..out.n() {
            for b in (a + 1)..out.n() {
                assert_ne!(out.rows.row(a), out.rows.row(b), "rows {a} and {b} equal");
            }
        }
        // Class proportions preserved exactly.
        assert_eq!(out.class_counts(), vec![40, 40]);
    }

    #[test]
    fn augment_degree_two_enumeration() {
        // One class with rows (1,2) and (3,4): synthetics live in the donor
        // product {1,3}x{2,4} minus existing rows.
        let train = ds(array![[1.0, 2.0], [3.0, 4.0]], vec![0, 0]);
        let out = augment(&train, 2, 5).unwrap();
        assert_eq!(out.n(), 4);
        for i in 2..4 {
            let (a, b) = (out.rows[[i, 0]], out.rows[[i, 1]]);
            assert!([1.0, 3.0].contains(&a) && [2.0, 4.0].contains(&b));
        }
    }

    #[test]
    fn augment_unattainable_uniqueness_drops_rows() {
        // Single-valued columns admit exactly one synthetic row pattern,
        // which already exists.
        let train = ds(array![[1.0, 1.0], [1.0, 1.0]], vec![0, 0]);
        let out = augment(&train, 3, 0).unwrap();
        assert_eq!(out.n(), 2); // all synthetics dropped
    }

    #[test]
    fn expand_row_statistics() {
        let rows = Array2::from_shape_fn((1, 9), |(_, j)| (j + 1) as f64);
        let train = ds(rows, vec![0]);
        let out = expand(&train).unwrap();
        assert_eq!(out.d(), 16);
        let r = out.rows.row(0);
        assert_eq!(r[9], 1.0); // min
        assert_eq!(r[10], 9.0); // max
        assert_eq!(r[11], 5.0); // mean
        assert_eq!(r[12], 5.0); // median
        assert_abs_diff_eq!(r[13], (60.0f64 / 9.0).sqrt(), epsilon = 1e-12); // population std
        assert_abs_diff_eq!(r[13], 2.581988897471611, epsilon = 1e-10);
        assert_abs_diff_eq!(r[14], 0.0, epsilon = 1e-12); // symmetric: skewness 0
    }

    #[test]
    fn expand_constant_row() {
        let train = ds(array![[3.0, 3.0, 3.0]], vec![0]);
        let out = expand(&train).unwrap();
        let r = out.rows.row(0);
        assert_eq!((r[7], r[8], r[9]), (0.0, 0.0, 0.0)); // std, skew, kurt
    }

    #[test]
    fn polynomial_counts_and_values() {
        let rows = Array2::from_shape_fn((2, 9), |(i, j)| (i + j) as f64);
        let out = polynomial(&ds(rows, vec![0, 1]), 2).unwrap();
        assert_eq!(out.d(), 54);

        let small = ds(array![[2.0, 3.0]], vec![0]);
        let out = polynomial(&small, 2).unwrap();
        assert_eq!(out.d(), 5);
        assert_eq!(out.rows.row(0).to_vec(), vec![2.0, 3.0, 6.0, 4.0, 9.0]);
        assert_eq!(
            out.feature_names,
            vec!["f0", "f1", "f0*f1", "f0*f0", "f1*f1"]
        );

        let zeros = ds(array![[0.0, 0.0, 0.0]], vec![0]);
        let out = polynomial(&zeros, 2).unwrap();
        assert!(out.rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn polynomial_column_formula_brute_force() {
        // d' = 2d + d(d-1)/2, checked against explicit enumeration.
        for d in 1..=20usize {
            let rows = Array2::from_shape_fn((1, d), |(_, j)| j as f64 + 0.5);
            let out = polynomial(&ds(rows, vec![0]), 2).unwrap();
            let mut count = d; // originals
            for i in 0..d {
                for _ in (i + 1)..d {
                    count += 1;
                }
            }
            count += d; // squares
            assert_eq!(out.d(), count);
            assert_eq!(out.d(), 2 * d + d * (d - 1) / 2);
        }
    }

    #[test]
    fn row_local_transforms_commute_with_permutation() {
        let rows = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 31 + j * 17) % 13) as f64);
        let base = ds(rows, vec![0, 1, 0, 1, 0]);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted = base.subset(&perm);
        for f in [expand, |d: &TabularDataset| polynomial(d, 2)] {
            let a = f(&base).unwrap().subset(&perm);
            let b = f(&permuted).unwrap();
            assert_eq!(a.rows, b.rows);
        }
    }

    #[test]
    fn recipe_identity_and_determinism() {
        let rows = Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64);
        let train = ds(rows.clone(), (0..10).map(|i| i % 2).collect());
        let test = ds(rows, (0..10).map(|i| i % 2).collect());
        let noop = TransformRecipe::default();
        let (tr, te) = apply_recipe(&train, &test, &noop, 0).unwrap();
        assert_eq!(tr, train);
        assert_eq!(te, test);

        let scaled = TransformRecipe {
            scale: true,
            ..Default::default()
        };
        let (a, _) = apply_recipe(&train, &test, &scaled, 1).unwrap();
        let (b, _) = apply_recipe(&train, &test, &scaled, 2).unwrap();
        assert_eq!(a, b); // scaling has no randomness
    }

    #[test]
    fn recipe_expand_augment_shapes() {
        let rows = Array2::from_shape_fn((20, 9), |(i, j)| ((i * 31 + j * 7) % 23) as f64);
        let train = ds(rows.clone(), (0..20).map(|i| i % 2).collect());
        let test = ds(rows, (0..20).map(|i| (i + 1) % 2).collect());
        let recipe = TransformRecipe {
            expand: true,
            augment: true,
            augment_degree: 4,
            ..Default::default()
        };
        let (tr, te) = apply_recipe(&train, &test, &recipe, 3).unwrap();
        assert_eq!(tr.d(), 16);
        assert_eq!(tr.n(), 80);
        assert_eq!(te.n(), 20); // leak-free: test untouched by augmentation
        assert_eq!(te.d(), 16);
    }

    #[test]
    fn recipe_paper_faithful_pools_before_split() {
        let rows = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 31 + j * 7) % 19) as f64);
        let train = ds(rows.clone(), (0..20).map(|i| i % 2).collect());
        let rows2 = Array2::from_shape_fn((10, 3), |(i, j)| ((i * 5 + j * 3) % 17) as f64 + 100.0);
        let test = ds(rows2, (0..10).map(|i| i % 2).collect());
        let recipe = TransformRecipe {
            augment: true,
            augment_degree: 2,
            leakage_mode: LeakageMode::PaperFaithful,
            ..Default::default()
        };
        let (tr, te) = apply_recipe(&train, &test, &recipe, 7).unwrap();
        // Pool of 30 doubled to 60, re-split at 1/3.
        assert_eq!(tr.n() + te.n(), 60);
        assert_eq!(te.n(), 20);
    }
}
