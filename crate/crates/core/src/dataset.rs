//! Tabular dataset loading, splitting, fold plans, and EIT label collapsing.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix with named columns and 0-based integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    /// n x d, row-major.
    pub rows: Array2<f64>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
}

/// Assignment of every row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

/// Number of classes the six EIT tissue labels are collapsed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EitMode {
    Two,
    Three,
    Six,
}

const EIT_LABELS: [&str; 6] = ["car", "fad", "mas", "gla", "con", "adi"];

impl TabularDataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Array2<f64>,
        labels: Vec<usize>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let ds = TabularDataset {
            feature_names,
            rows,
            labels,
            label_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 || self.d() == 0 {
            return Err(Error::InvalidDataset("need n >= 1 and d >= 1".into()));
        }
        if self.feature_names.len() != self.d() {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {} columns",
                self.feature_names.len(),
                self.d()
            )));
        }
        if self.labels.len() != self.n() {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.n()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.label_names.len()) {
            return Err(Error::InvalidDataset(format!(
                "label id {bad} out of range (have {} label names)",
                self.label_names.len()
            )));
        }
        if self.rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(())
    }

    /// Number of rows in each class, indexed by label id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.label_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let rows = self.rows.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        TabularDataset {
            feature_names: self.feature_names.clone(),
            rows,
            labels,
            label_names: self.label_names.clone(),
        }
    }

    /// Row indices of each class, indexed by label id.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut per_class = vec![Vec::new(); self.label_names.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            per_class[l].push(i);
        }
        per_class
    }
}

/// Load a dataset from a UTF-8 comma-separated file with a header row.
///
/// The label column may hold arbitrary strings; label ids are assigned in
/// first-appearance order. Every other cell must parse as a finite real.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<TabularDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedFile {
        path: path.into(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| Error::UnknownLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = columns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, c)| c.to_string())
        .collect();
    let d = feature_names.len();
    if d == 0 {
        return Err(Error::InvalidDataset("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut n = 0usize;
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::MalformedFile {
                path: path.into(),
                line: line_no + 1,
                msg: format!("expected {} cells, found {}", columns.len(), cells.len()),
            });
        }
        for (col, cell) in cells.iter().enumerate() {
            if col == label_idx {
                let name = cell.to_string();
                let id = match label_names.iter().position(|l| *l == name) {
                    Some(id) => id,
                    None => {
                        label_names.push(name);
                        label_names.len() - 1
                    }
                };
                labels.push(id);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::ParseCell {
                    path: path.into(),
                    row: line_no + 1,
                    col: col + 1,
                    token: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::ParseCell {
                        path: path.into(),
                        row: line_no + 1,
                        col: col + 1,
                        token: cell.to_string(),
                    });
                }
                values.push(v);
            }
        }
        n += 1;
    }
    let rows = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    TabularDataset::new(feature_names, rows, labels, label_names)
}

/// Write a dataset as CSV with the label in a trailing `label` column.
/// Values use the shortest representation that round-trips, so
/// `load_csv(save_csv(ds))` reproduces `ds` bit for bit.
pub fn save_csv(ds: &TabularDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for name in &ds.feature_names {
        let _ = write!(out, "{name},");
    }
    out.push_str("label\n");
    for (i, row) in ds.rows.outer_iter().enumerate() {
        for v in row.iter() {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", ds.label_names[ds.labels[i]]);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Deterministic train/test split. With `stratified` set, every class's test
/// share stays within one instance of `test_fraction`.
pub fn train_test_split(
    ds: &TabularDataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(TabularDataset, TabularDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = (ds.n() as f64 * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, ds.n() - 1);

    let mut test_idx: Vec<usize> = Vec::with_capacity(n_test);
    if stratified {
        let mut per_class = ds.class_indices();
        per_class.retain(|c| !c.is_empty());
        for (class, members) in per_class.iter().enumerate() {
            if members.len() < 2 {
                return Err(Error::DegenerateClass {
                    class: ds.label_names[class].clone(),
                    count: members.len(),
                    needed: 2,
                });
            }
        }
        for members in per_class.iter_mut() {
            members.shuffle(&mut rng);
        }
        // Largest-remainder apportionment of n_test over the classes.
        let quotas: Vec<f64> = per_class
            .iter()
            .map(|m| m.len() as f64 * test_fraction)
            .collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut assigned: usize = take.iter().sum();
        let mut order: Vec<usize> = (0..per_class.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut cursor = 0;
        while assigned < n_test {
            let c = order[cursor % order.len()];
            if take[c] < per_class[c].len() - 1 {
                take[c] += 1;
                assigned += 1;
            }
            cursor += 1;
        }
        while assigned > n_test {
            let c = order[cursor % order.len()];
            if take[c] > 0 {
                take[c] -= 1;
                assigned -= 1;
            }
            cursor += 1;
        }
        for (members, &t) in per_class.iter().zip(&take) {
            test_idx.extend_from_slice(&members[..t]);
        }
    } else {
        let mut all: Vec<usize> = (0..ds.n()).collect();
        all.shuffle(&mut rng);
        test_idx.extend_from_slice(&all[..n_test]);
    }
    test_idx.sort_unstable();
    let in_test: Vec<bool> = {
        let mut v = vec![false; ds.n()];
        for &i in &test_idx {
            v[i] = true;
        }
        v
    };
    let train_idx: Vec<usize> = (0..ds.n()).filter(|&i| !in_test[i]).collect();
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

/// Stratified k-fold plan: per-class counts across folds differ by at most
/// one, and overall fold sizes stay balanced.
pub fn stratified_kfold(ds: &TabularDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; ds.n()];
    let mut start = 0usize;
    for (class, members) in ds.class_indices().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::DegenerateClass {
                class: ds.label_names[class].clone(),
                count: members.len(),
                needed: k,
            });
        }
        let mut members = members;
        members.shuffle(&mut rng);
        for (j, &idx) in members.iter().enumerate() {
            assignments[idx] = (start + j) % k;
        }
        // Rotating the dealing origin keeps global fold sizes within one.
        start = (start + members.len()) % k;
    }
    Ok(FoldPlan { k, assignments })
}

impl FoldPlan {
    pub fn validate(&self) -> Result<()> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignments {
            if f >= self.k {
                return Err(Error::InvalidArgument(format!("fold id {f} >= k")));
            }
            sizes[f] += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("empty fold".into()));
        }
        Ok(())
    }

    /// Train/validation index pair for one fold.
    pub fn fold(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }
}

/// Collapse the six EIT tissue labels.
///
/// `two`: carcinoma vs everything else; `three`: carcinoma / {fad, mas, gla}
/// / {con, adi}; `six`: identity. `drop_con_adi` removes connective and
/// adipose rows in two-class mode instead of keeping them in class 0.
pub fn relabel_eit_opts(
    ds: &TabularDataset,
    mode: EitMode,
    drop_con_adi: bool,
) -> Result<TabularDataset> {
    let canon: Vec<String> = ds
        .label_names
        .iter()
        .map(|n| n.trim().to_lowercase())
        .collect();
    for name in &canon {
        if !EIT_LABELS.contains(&name.as_str()) {
            return Err(Error::UnknownSourceLabel(name.clone()));
        }
    }
    if matches!(mode, EitMode::Six) {
        return Ok(ds.clone());
    }
    let map = |name: &str| -> usize {
        match (mode, name) {
            (EitMode::Two, "car") => 1,
            (EitMode::Two, _) => 0,
            (EitMode::Three, "car") => 2,
            (EitMode::Three, "fad" | "mas" | "gla") => 1,
            (EitMode::Three, _) => 0,
            _ => unreachable!(),
        }
    };
    let label_names: Vec<String> = match mode {
        EitMode::Two => vec!["non-car".into(), "car".into()],
        EitMode::Three => vec!["con+adi".into(), "fad+mas+gla".into(), "car".into()],
        EitMode::Six => unreachable!(),
    };
    let keep: Vec<usize> = (0..ds.n())
        .filter(|&i| {
            !(drop_con_adi
                && matches!(mode, EitMode::Two)
                && matches!(canon[ds.labels[i]].as_str(), "con" | "adi"))
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidDataset("all rows dropped".into()));
    }
    let sub = ds.subset(&keep);
    let labels = sub
        .labels
        .iter()
        .map(|&l| map(canon[l].as_str()))
        .collect();
    TabularDataset::new(sub.feature_names, sub.rows, labels, label_names)
}

pub fn relabel_eit(ds: &TabularDataset, mode: EitMode) -> Result<TabularDataset> {
    relabel_eit_opts(ds, mode, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_csv() {
        let f = write_tmp("a,b,y\n1,2,pos\n3,4,neg\n5,6,pos\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.label_names, vec!["pos", "neg"]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.rows, array![[1., 2.], [3., 4.], [5., 6.]]);
    }

    #[test]
    fn load_reports_bad_cell() {
        let f = write_tmp("a,b,y\n1,2,pos\n3,oops,neg\n");
        match load_csv(f.path(), "y") {
            Err(Error::ParseCell { row, col, token, .. }) => {
                assert_eq!((row, col), (3, 2));
                assert_eq!(token, "oops");
            }
            other => panic!("expected ParseCell, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_unknown_label_column() {
        let f = write_tmp("a,b,y\n1,2,pos\n");
        assert!(matches!(
            load_csv(f.path(), "z"),
            Err(Error::UnknownLabelColumn(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = TabularDataset::new(
            vec!["x1".into(), "x2".into()],
            array![[0.1, -3.25e-7], [1e300, 2.0 / 3.0], [7.0, 0.0]],
            vec![0, 1, 0],
            vec!["pos".into(), "neg".into()],
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_csv(&ds, f.path()).unwrap();
        let back = load_csv(f.path(), "label").unwrap();
        assert_eq!(ds, back);
    }

    fn toy(n_per_class: &[usize]) -> TabularDataset {
        let n: usize = n_per_class.iter().sum();
        let mut labels = Vec::new();
        for (c, &cnt) in n_per_class.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(cnt));
        }
        let rows = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let label_names = (0..n_per_class.len()).map(|c| format!("c{c}")).collect();
        TabularDataset::new(vec!["a".into(), "b".into()], rows, labels, label_names).unwrap()
    }

    #[test]
    fn stratified_split_sizes() {
        let ds = toy(&[5, 5]);
        let (train, test) = train_test_split(&ds, 0.3, 7, true).unwrap();
        assert_eq!(test.n(), 3);
        assert_eq!(train.n(), 7);
        let counts = test.class_counts();
        assert!(counts.iter().all(|&c| c >= 1), "counts {counts:?}");
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let ds = toy(&[7, 9, 4]);
        let (tr1, te1) = train_test_split(&ds, 0.3, 42, true).unwrap();
        let (tr2, te2) = train_test_split(&ds, 0.3, 42, true).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        // Partition: recombined multiset of first-column values matches.
        let mut combined: Vec<f64> = tr1
            .rows
            .column(0)
            .iter()
            .chain(te1.rows.column(0).iter())
            .copied()
            .collect();
        combined.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut original: Vec<f64> = ds.rows.column(0).to_vec();
        original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(combined, original);
    }

    #[test]
    fn split_116_at_30_percent() {
        let ds = toy(&[53, 63]);
        let (_, test) = train_test_split(&ds, 0.3, 1, true).unwrap();
        assert_eq!(test.n(), 35);
    }

    #[test]
    fn kfold_balanced_classes() {
        let ds = toy(&[3, 3, 3]);
        let plan = stratified_kfold(&ds, 3, 0).unwrap();
        plan.validate().unwrap();
        for fold in 0..3 {
            let (_, val) = plan.fold(fold);
            assert_eq!(val.len(), 3);
            let mut classes: Vec<usize> = val.iter().map(|&i| ds.labels[i]).collect();
            classes.sort_unstable();
            assert_eq!(classes, vec![0, 1, 2]);
        }
    }

    #[test]
    fn kfold_eit_sizes() {
        // Class sizes of the six-class EIT set.
        let ds = toy(&[21, 15, 18, 16, 14, 22]);
        let plan = stratified_kfold(&ds, 3, 3).unwrap();
        let mut sizes = vec![0usize; 3];
        for &f in &plan.assignments {
            sizes[f] += 1;
        }
        sizes.sort_unstable();
        assert_eq!(sizes, vec![35, 35, 36]);
    }

    #[test]
    fn kfold_rejects_small_class() {
        let ds = toy(&[2, 9]);
        assert!(matches!(
            stratified_kfold(&ds, 3, 0),
            Err(Error::DegenerateClass { .. })
        ));
    }

    fn eit_toy() -> TabularDataset {
        let names = ["car", "fad", "adi", "mas", "gla", "con"];
        TabularDataset::new(
            vec!["f".into()],
            Array2::from_shape_fn((6, 1), |(i, _)| i as f64),
            vec![0, 1, 2, 3, 4, 5],
            names.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn relabel_modes() {
        let ds = eit_toy();
        let six = relabel_eit(&ds, EitMode::Six).unwrap();
        assert_eq!(six.labels, ds.labels);
        let two = relabel_eit(&ds, EitMode::Two).unwrap();
        assert_eq!(two.labels, vec![1, 0, 0, 0, 0, 0]);
        let three = relabel_eit(&ds, EitMode::Three).unwrap();
        assert_eq!(three.labels, vec![2, 1, 0, 1, 1, 0]);
    }

    #[test]
    fn relabel_two_drop_con_adi() {
        let ds = eit_toy();
        let two = relabel_eit_opts(&ds, EitMode::Two, true).unwrap();
        assert_eq!(two.n(), 4);
        assert_eq!(two.labels, vec![1, 0, 0, 0]);
    }

    #[test]
    fn relabel_rejects_unknown_label() {
        let ds = TabularDataset::new(
            vec!["f".into()],
            array![[1.0]],
            vec![0],
            vec!["weird".into()],
        )
        .unwrap();
        assert!(matches!(
            relabel_eit(&ds, EitMode::Two),
            Err(Error::UnknownSourceLabel(_))
        ));
    }
}
