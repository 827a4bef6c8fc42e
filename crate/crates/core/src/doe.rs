//! Design-of-experiments harness: enumerate transform-recipe grids, run
//! every learner family on every cell over a shared train/test split, and
//! emit fixed-format CSV tables plus per-cell threshold-sweep curves. A
//! second phase compares default GBT configurations against their
//! hyper-parameter-optimized counterparts.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{train_test_split, TabularDataset};
use crate::error::{Error, Result};
use crate::evaluation::{roc_auc, threshold_sweep, MetricKind, MetricSet, SweepResult};
use crate::hpo::{optimize, preset_space, Algo};
use crate::learners::{LearnerFamily, Params, ROSTER};
use crate::tabular::{apply_recipe, TransformRecipe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: LearnerFamily,
    #[serde(default)]
    pub params: Params,
}

/// One spec per family, all on library defaults.
pub fn default_roster() -> Vec<LearnerSpec> {
    ROSTER
        .iter()
        .map(|&family| LearnerSpec {
            family,
            params: Params::new(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dataset_id: String,
    pub grid: Vec<TransformRecipe>,
    pub roster: Vec<LearnerSpec>,
    pub test_fraction: f64,
    pub seed: u64,
    pub metric: MetricKind,
}

impl ExperimentPlan {
    pub fn new(dataset_id: &str, seed: u64) -> ExperimentPlan {
        ExperimentPlan {
            dataset_id: dataset_id.into(),
            grid: tabular_grid(),
            roster: default_roster(),
            test_fraction: 0.3,
            seed,
            metric: MetricKind::F1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.roster.is_empty() {
            return Err(Error::InvalidArgument(
                "experiment plan needs a non-empty grid and roster".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        for r in &self.grid {
            r.validate()?;
        }
        Ok(())
    }
}

/// All 2^4 combinations of {scale, expand, augment, polynomial}, ordered
/// from the untouched data to the fully enhanced cell.
pub fn tabular_grid() -> Vec<TransformRecipe> {
    let mut grid = Vec::with_capacity(16);
    for bits in 0..16u8 {
        grid.push(TransformRecipe {
            scale: bits & 1 != 0,
            expand: bits & 2 != 0,
            augment: bits & 4 != 0,
            polynomial: bits & 8 != 0,
            ..TransformRecipe::default()
        });
    }
    grid
}

/// Preprocessing toggles for the thermal pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ThermalToggles {
    pub mask: bool,
    pub augment: bool,
    pub normalize: bool,
}

impl ThermalToggles {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.mask {
            parts.push("masked");
        }
        if self.normalize {
            parts.push("normalized");
        }
        if self.augment {
            parts.push("augmented");
        }
        if parts.is_empty() {
            "original".into()
        } else {
            parts.join("+")
        }
    }
}

/// All 2^3 combinations of {mask, augment, normalize}, all-off first.
pub fn thermal_grid() -> Vec<ThermalToggles> {
    let mut grid = Vec::with_capacity(8);
    for bits in 0..8u8 {
        grid.push(ThermalToggles {
            mask: bits & 1 != 0,
            normalize: bits & 2 != 0,
            augment: bits & 4 != 0,
        });
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub recipe: String,
    pub model: String,
    pub metrics: MetricSet,
    pub roc_auc: Option<f64>,
    pub threshold: f64,
    pub duration_ms: u64,
    /// "ok" or "failed"; failed rows render metrics as 0.
    pub status: String,
    /// Semicolon-joined notes: undefined metrics rendered as 0, or the
    /// failure message.
    pub flags: String,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: ResultRow,
    /// Absent for failed rows.
    pub sweep: Option<SweepResult>,
}

fn undefined_flags(m: &MetricSet, auc: Option<f64>) -> String {
    let mut flags = Vec::new();
    for (name, v) in [
        ("accuracy", m.accuracy),
        ("precision", m.precision),
        ("recall", m.sensitivity),
        ("specificity", m.specificity),
        ("npv", m.npv),
        ("f1", m.f1),
        ("roc_auc", auc),
    ] {
        if v.is_none() {
            flags.push(format!("{name}_undefined_rendered_0"));
        }
    }
    flags.join(";")
}

fn evaluate_model(
    spec: &LearnerSpec,
    train: &TabularDataset,
    test: &TabularDataset,
    metric: MetricKind,
    seed: u64,
    recipe_label: &str,
) -> CellResult {
    let started = Instant::now();
    let outcome = spec
        .family
        .train(train, &spec.params, seed)
        .and_then(|model| model.predict_scores(test))
        .and_then(|scores| {
            let sweep = threshold_sweep(&scores, &test.labels, metric)?;
            let auc = roc_auc(&scores, &test.labels).ok();
            Ok((sweep, auc))
        });
    let duration_ms = started.elapsed().as_millis() as u64;
    match outcome {
        Ok((sweep, auc)) => {
            let selected = sweep.selected.clone();
            CellResult {
                row: ResultRow {
                    recipe: recipe_label.into(),
                    model: spec.family.name().into(),
                    flags: undefined_flags(&selected.metrics, auc),
                    metrics: selected.metrics,
                    roc_auc: auc,
                    threshold: selected.threshold,
                    duration_ms,
                    status: "ok".into(),
                },
                sweep: Some(sweep),
            }
        }
        Err(e) => CellResult {
            row: ResultRow {
                recipe: recipe_label.into(),
                model: spec.family.name().into(),
                metrics: MetricSet::default(),
                roc_auc: None,
                threshold: 0.5,
                duration_ms,
                status: "failed".into(),
                flags: format!("error={}", e.to_string().replace([',', '\n'], " ")),
            },
            sweep: None,
        },
    }
}

/// Mix a cell index into the plan seed so parallel cells stay independent
/// and reproducible.
fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(cell as u64 + 1)
}

/// Phase 1: one shared split per seed, every recipe applied to that split,
/// every roster model trained and threshold-swept on the result. Cells run
/// in parallel; per-model failures are recorded and the run continues.
pub fn run_doe(plan: &ExperimentPlan, ds: &TabularDataset) -> Result<Vec<CellResult>> {
    plan.validate()?;
    ds.validate()?;
    let (train, test) = train_test_split(ds, plan.test_fraction, plan.seed, true)?;
    let cells: Vec<(usize, &TransformRecipe)> = plan.grid.iter().enumerate().collect();
    let nested: Vec<Result<Vec<CellResult>>> = cells
        .par_iter()
        .map(|&(ci, recipe)| {
            let seed = cell_seed(plan.seed, ci);
            let (tr, te) = apply_recipe(&train, &test, recipe, seed)?;
            let label = recipe.label();
            Ok(plan
                .roster
                .iter()
                .map(|spec| evaluate_model(spec, &tr, &te, plan.metric, seed, &label))
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(plan.grid.len() * plan.roster.len());
    for cell in nested {
        out.extend(cell?);
    }
    Ok(out)
}

fn fmt(v: Option<f64>) -> String {
    format!("{:.6}", v.unwrap_or(0.0))
}

pub const PHASE1_HEADER: &str =
    "recipe,model,accuracy,precision,recall,f1,specificity,npv,roc_auc,threshold,time_ms,status,flags";

pub fn phase1_csv(results: &[CellResult]) -> String {
    let mut csv = String::from(PHASE1_HEADER);
    csv.push('\n');
    for r in results {
        let m = &r.row.metrics;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{},{},{}\n",
            r.row.recipe,
            r.row.model,
            fmt(m.accuracy),
            fmt(m.precision),
            fmt(m.sensitivity),
            fmt(m.f1),
            fmt(m.specificity),
            fmt(m.npv),
            fmt(r.row.roc_auc),
            r.row.threshold,
            r.row.duration_ms,
            r.row.status,
            r.row.flags,
        ));
    }
    csv
}

pub fn write_phase1_csv(results: &[CellResult], path: &Path) -> Result<()> {
    fs::write(path, phase1_csv(results)).map_err(|e| Error::io(path, e))
}

/// One curve file per (cell, model): the full threshold sweep.
pub fn write_curves(results: &[CellResult], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in results {
        let Some(sweep) = &r.sweep else { continue };
        let name = format!(
            "{}_{}.csv",
            r.row.recipe.replace('+', "-"),
            r.row.model
        );
        let path = dir.join(name);
        let mut csv =
            String::from("threshold,tp,fp,tn,fn,accuracy,precision,recall,f1\n");
        for p in &sweep.points {
            csv.push_str(&format!(
                "{:.6},{},{},{},{},{},{},{},{}\n",
                p.threshold,
                p.confusion.tp,
                p.confusion.fp,
                p.confusion.tn,
                p.confusion.fn_,
                fmt(p.metrics.accuracy),
                fmt(p.metrics.precision),
                fmt(p.metrics.sensitivity),
                fmt(p.metrics.f1),
            ));
        }
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Parse a phase-1 CSV back into rows (numeric fields only; sweeps are not
/// reconstructed). Undefined metrics are recovered from the flags column.
pub fn parse_phase1_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != PHASE1_HEADER {
        return Err(Error::InvalidArgument("unexpected phase-1 header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.splitn(13, ',').collect();
        if cells.len() != 13 {
            return Err(Error::InvalidArgument(format!(
                "phase-1 row {} has {} fields, expected 13",
                i + 2,
                cells.len()
            )));
        }
        let flags = cells[12].to_string();
        let num = |idx: usize, name: &str| -> Result<Option<f64>> {
            if flags.contains(&format!("{name}_undefined_rendered_0"))
                || cells[11] == "failed"
            {
                return Ok(None);
            }
            cells[idx]
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("bad number {:?}", cells[idx])))
        };
        rows.push(ResultRow {
            recipe: cells[0].into(),
            model: cells[1].into(),
            metrics: MetricSet {
                accuracy: num(2, "accuracy")?,
                precision: num(3, "precision")?,
                sensitivity: num(4, "recall")?,
                f1: num(5, "f1")?,
                specificity: num(6, "specificity")?,
                npv: num(7, "npv")?,
            },
            roc_auc: num(8, "roc_auc")?,
            threshold: cells[9].parse().map_err(|_| {
                Error::InvalidArgument(format!("bad threshold {:?}", cells[9]))
            })?,
            duration_ms: cells[10].parse().map_err(|_| {
                Error::InvalidArgument(format!("bad time_ms {:?}", cells[10]))
            })?,
            status: cells[11].into(),
            flags,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoComparisonRow {
    pub family: LearnerFamily,
    pub phase1: ResultRow,
    pub phase2: ResultRow,
    pub best_params: Params,
    pub best_cv_loss: f64,
    pub n_iters: usize,
}

/// Phase 2: per GBT family, search its preset space with cross-validated
/// loss on the training side of the shared split, retrain the best
/// configuration on the full training set, and report it next to the
/// phase-1 default row.
pub fn run_hpo_phase(
    ds: &TabularDataset,
    recipe: &TransformRecipe,
    families: &[LearnerFamily],
    n_iters: usize,
    algo: Algo,
    test_fraction: f64,
    metric: MetricKind,
    seed: u64,
) -> Result<Vec<HpoComparisonRow>> {
    if n_iters == 0 {
        return Err(Error::InvalidArgument("HPO budget must be >= 1".into()));
    }
    let (train_raw, test_raw) = train_test_split(ds, test_fraction, seed, true)?;
    let (train, test) = apply_recipe(&train_raw, &test_raw, recipe, seed)?;
    let label = recipe.label();
    let mut rows = Vec::with_capacity(families.len());
    for &family in families {
        let space = preset_space(family)?;
        let baseline = evaluate_model(
            &LearnerSpec {
                family,
                params: Params::new(),
            },
            &train,
            &test,
            metric,
            seed,
            &label,
        );
        let objective = crate::hpo::cv_objective(family, &train, 5, metric, seed);
        let history = optimize(objective, &space, n_iters, algo, seed, None)?;
        let best = history.best().ok_or_else(|| {
            Error::InvalidArgument(format!("all {n_iters} trials failed for {}", family.name()))
        })?;
        let tuned = evaluate_model(
            &LearnerSpec {
                family,
                params: best.params.clone(),
            },
            &train,
            &test,
            metric,
            seed,
            &label,
        );
        rows.push(HpoComparisonRow {
            family,
            phase1: baseline.row,
            phase2: tuned.row,
            best_params: best.params.clone(),
            best_cv_loss: best.ok_loss(),
            n_iters,
        });
    }
    Ok(rows)
}

pub fn phase2_csv(rows: &[HpoComparisonRow]) -> String {
    let mut csv = String::from(
        "recipe,model,phase,accuracy,precision,recall,f1,roc_auc,threshold,cv_loss,iters,best_params\n",
    );
    for r in rows {
        for (phase, row, extra) in [
            ("phase1", &r.phase1, String::new()),
            (
                "phase2",
                &r.phase2,
                serde_json::to_string(&r.best_params)
                    .unwrap_or_default()
                    .replace(',', ";"),
            ),
        ] {
            let cv = if phase == "phase2" {
                format!("{:.6}", r.best_cv_loss)
            } else {
                String::new()
            };
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6},{},{},{}\n",
                row.recipe,
                row.model,
                phase,
                fmt(row.metrics.accuracy),
                fmt(row.metrics.precision),
                fmt(row.metrics.sensitivity),
                fmt(row.metrics.f1),
                fmt(row.roc_auc),
                row.threshold,
                cv,
                r.n_iters,
                extra,
            ));
        }
    }
    csv
}

pub fn write_phase2_csv(rows: &[HpoComparisonRow], path: &Path) -> Result<()> {
    fs::write(path, phase2_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::tests::toy_dataset;
    use crate::tabular::LeakageMode;

    #[test]
    fn tabular_grid_shape_and_order() {
        let grid = tabular_grid();
        assert_eq!(grid.len(), 16);
        let first = &grid[0];
        assert!(!first.scale && !first.expand && !first.augment && !first.polynomial);
        let last = &grid[15];
        assert!(last.scale && last.expand && last.augment && last.polynomial);
        // All distinct.
        let labels: std::collections::BTreeSet<String> =
            grid.iter().map(|r| r.label()).collect();
        assert_eq!(labels.len(), 16);
    }

    #[test]
    fn thermal_grid_shape() {
        let grid = thermal_grid();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid[0], ThermalToggles::default());
        assert!(grid.iter().any(|t| t.mask && !t.augment && !t.normalize));
    }

    fn small_plan() -> ExperimentPlan {
        let mut plan = ExperimentPlan::new("toy", 9);
        plan.grid = vec![
            TransformRecipe::default(),
            TransformRecipe {
                scale: true,
                expand: true,
                ..TransformRecipe::default()
            },
        ];
        plan.roster = vec![
            LearnerSpec {
                family: LearnerFamily::Logistic,
                params: Params::new(),
            },
            LearnerSpec {
                family: LearnerFamily::Tree,
                params: Params::new(),
            },
            LearnerSpec {
                family: LearnerFamily::Knn,
                params: Params::new(),
            },
        ];
        plan
    }

    #[test]
    fn run_doe_row_count_and_determinism() {
        let ds = toy_dataset(60, 4, 3);
        let plan = small_plan();
        let a = run_doe(&plan, &ds).unwrap();
        assert_eq!(a.len(), plan.grid.len() * plan.roster.len());
        let b = run_doe(&plan, &ds).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.row.metrics, y.row.metrics);
            assert_eq!(x.row.threshold, y.row.threshold);
            assert_eq!(x.row.recipe, y.row.recipe);
        }
    }

    #[test]
    fn phase1_csv_round_trips_numeric_fields() {
        let ds = toy_dataset(50, 3, 7);
        let plan = small_plan();
        let results = run_doe(&plan, &ds).unwrap();
        let csv = phase1_csv(&results);
        let parsed = parse_phase1_csv(&csv).unwrap();
        assert_eq!(parsed.len(), results.len());
        for (p, r) in parsed.iter().zip(results.iter()) {
            // Exact after the documented 6-decimal formatting.
            let re = |v: Option<f64>| v.map(|x| format!("{x:.6}"));
            assert_eq!(re(p.metrics.accuracy), re(r.row.metrics.accuracy));
            assert_eq!(re(p.metrics.f1), re(r.row.metrics.f1));
            assert_eq!(re(p.roc_auc), re(r.row.roc_auc));
            assert_eq!(
                format!("{:.6}", p.threshold),
                format!("{:.6}", r.row.threshold)
            );
            assert_eq!(p.model, r.row.model);
            assert_eq!(p.status, r.row.status);
        }
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        // A single-feature dataset with a label name list of length 3 makes
        // the logistic learner refuse while others still run.
        let mut ds = toy_dataset(40, 3, 5);
        ds.label_names.push("extra".into());
        let mut plan = small_plan();
        plan.grid.truncate(1);
        let results = run_doe(&plan, &ds).unwrap();
        assert_eq!(results.len(), plan.roster.len());
        let failed: Vec<&CellResult> =
            results.iter().filter(|r| r.row.status == "failed").collect();
        assert!(!failed.is_empty());
        for f in failed {
            assert!(f.row.flags.starts_with("error="));
            assert!(f.sweep.is_none());
        }
        assert!(results.iter().any(|r| r.row.status == "ok"));
    }

    #[test]
    fn curves_written_per_ok_row() {
        let ds = toy_dataset(40, 3, 11);
        let mut plan = small_plan();
        plan.grid.truncate(1);
        let results = run_doe(&plan, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_curves(&results, dir.path()).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        let ok_rows = results.iter().filter(|r| r.row.status == "ok").count();
        assert_eq!(files.len(), ok_rows);
    }

    #[test]
    fn hpo_phase_single_iteration_matches_single_trial() {
        let ds = toy_dataset(60, 3, 13);
        let recipe = TransformRecipe {
            scale: true,
            ..TransformRecipe::default()
        };
        let rows = run_hpo_phase(
            &ds,
            &recipe,
            &[LearnerFamily::GbtX],
            1,
            Algo::Random,
            0.3,
            MetricKind::F1,
            17,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        // With one trial the chosen params are exactly the sampled ones.
        let expected = crate::hpo::suggest_random(&crate::hpo::gbt_x_space(), 17, 0).unwrap();
        assert_eq!(rows[0].best_params, expected);
        assert_eq!(rows[0].phase1.model, rows[0].phase2.model);
    }

    #[test]
    fn hpo_budget_zero_rejected() {
        let ds = toy_dataset(40, 3, 1);
        let err = run_hpo_phase(
            &ds,
            &TransformRecipe::default(),
            &[LearnerFamily::GbtX],
            0,
            Algo::Random,
            0.3,
            MetricKind::F1,
            1,
        );
        assert!(err.is_err());
    }

    #[test]
    fn leakage_modes_produce_both_labels() {
        // Smoke test that both modes run end to end on the same plan.
        let ds = toy_dataset(60, 3, 21);
        for mode in [LeakageMode::LeakFree, LeakageMode::PaperFaithful] {
            let mut plan = small_plan();
            for r in &mut plan.grid {
                r.leakage_mode = mode;
            }
            let results = run_doe(&plan, &ds).unwrap();
            assert_eq!(results.len(), plan.grid.len() * plan.roster.len());
        }
    }
}
