//! Run configuration: a single JSON file describing the dataset, recipe
//! grid, learner roster, split, seeds, HPO budget, and output directory.
//! Unknown keys are rejected; every run echoes its fully resolved config
//! back to disk so it can be reproduced bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, relabel_eit, EitMode, TabularDataset};
use crate::error::{Error, Result};
use crate::evaluation::MetricKind;
use crate::hpo::Algo;
use crate::learners::LearnerFamily;
use crate::tabular::{LeakageMode, TransformRecipe};

/// Environment variable naming an alternative root for relative data paths.
pub const DATA_DIR_ENV: &str = "THERMOSCAN_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Blood,
    Eit,
    Thermal,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HpoSettings {
    pub iters: usize,
    pub algo: Algo,
    pub families: Vec<String>,
    pub folds: usize,
}

impl Default for HpoSettings {
    fn default() -> Self {
        HpoSettings {
            iters: 200,
            algo: Algo::Tpe,
            families: vec!["gbt_x".into(), "gbt_l".into()],
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSettings {
    pub healthy: usize,
    pub tumor: usize,
    /// Solver node spacing, m.
    pub resolution: f64,
    pub out_height: usize,
    pub out_width: usize,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            healthy: 5,
            tumor: 5,
            resolution: 1e-3,
            out_height: 32,
            out_width: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Tabular CSV path; defaults per dataset kind when omitted.
    pub csv: Option<PathBuf>,
    /// Thermal/synthetic patient-directory root.
    pub data_dir: Option<PathBuf>,
    /// Label column in the CSV; defaults per dataset kind.
    pub label_column: Option<String>,
    /// Classes the six EIT labels collapse into (2, 3, or 6).
    pub eit_classes: usize,
    /// Recipe used by single-recipe commands (engineer, optimize, evaluate).
    pub recipe: TransformRecipe,
    /// DOE grid; the full 16-cell grid when omitted.
    pub grid: Option<Vec<TransformRecipe>>,
    /// Learner family names; the full roster when empty.
    pub roster: Vec<String>,
    pub test_fraction: f64,
    pub seed: u64,
    pub metric: MetricKind,
    pub leakage_mode: LeakageMode,
    pub hpo: HpoSettings,
    pub simulate: SimulateSettings,
    pub out_dir: PathBuf,
    /// Worker threads for DOE cells; logical cores when omitted.
    pub jobs: Option<usize>,
    /// Emit both leakage modes side by side.
    pub both_modes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Blood,
            csv: None,
            data_dir: None,
            label_column: None,
            eit_classes: 2,
            recipe: TransformRecipe::default(),
            grid: None,
            roster: Vec::new(),
            test_fraction: 0.3,
            seed: 42,
            metric: MetricKind::F1,
            leakage_mode: LeakageMode::default(),
            hpo: HpoSettings::default(),
            simulate: SimulateSettings::default(),
            out_dir: PathBuf::from("results"),
            jobs: None,
            both_modes: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !matches!(self.eit_classes, 2 | 3 | 6) {
            return Err(Error::Config(format!(
                "eit_classes must be 2, 3, or 6, got {}",
                self.eit_classes
            )));
        }
        self.recipe
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::Config("grid must not be empty".into()));
            }
            for r in grid {
                r.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        for name in &self.roster {
            LearnerFamily::parse(name).map_err(|e| Error::Config(e.to_string()))?;
        }
        for name in &self.hpo.families {
            LearnerFamily::parse(name).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.hpo.folds < 2 {
            return Err(Error::Config("hpo.folds must be >= 2".into()));
        }
        if self.simulate.healthy == 0 || self.simulate.tumor == 0 {
            return Err(Error::Config(
                "simulate.healthy and simulate.tumor must be >= 1".into(),
            ));
        }
        if matches!(self.dataset, DatasetKind::Blood | DatasetKind::Eit) {
            let path = self.csv_path();
            if !path.exists() {
                return Err(Error::Config(format!(
                    "dataset csv not found: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Resolve a relative data path against `THERMOSCAN_DATA_DIR` when the
    /// file is not present relative to the working directory.
    pub fn resolve_data_path(path: &Path) -> PathBuf {
        if path.is_absolute() || path.exists() {
            return path.to_path_buf();
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(root) => PathBuf::from(root).join(path),
            None => path.to_path_buf(),
        }
    }

    pub fn csv_path(&self) -> PathBuf {
        let default = match self.dataset {
            DatasetKind::Blood => "data/blood_biomarkers.csv",
            DatasetKind::Eit => "data/eit_breast_tissue.csv",
            _ => "",
        };
        let path = self
            .csv
            .clone()
            .unwrap_or_else(|| PathBuf::from(default));
        Self::resolve_data_path(&path)
    }

    pub fn data_root(&self) -> Result<PathBuf> {
        let path = self.data_dir.as_ref().ok_or_else(|| {
            Error::Config("data_dir is required for thermal/synthetic datasets".into())
        })?;
        Ok(Self::resolve_data_path(path))
    }

    /// Load (and for EIT, relabel) the configured tabular dataset.
    pub fn load_tabular(&self) -> Result<TabularDataset> {
        let path = self.csv_path();
        match self.dataset {
            DatasetKind::Blood => {
                let label = self.label_column.as_deref().unwrap_or("Classification");
                load_csv(&path, label)
            }
            DatasetKind::Eit => {
                let label = self.label_column.as_deref().unwrap_or("Class");
                let ds = load_csv(&path, label)?;
                let mode = match self.eit_classes {
                    2 => EitMode::Two,
                    3 => EitMode::Three,
                    _ => EitMode::Six,
                };
                relabel_eit(&ds, mode)
            }
            _ => Err(Error::Config(
                "load_tabular only applies to blood/eit datasets".into(),
            )),
        }
    }

    pub fn roster_families(&self) -> Result<Vec<LearnerFamily>> {
        if self.roster.is_empty() {
            return Ok(crate::learners::ROSTER.to_vec());
        }
        self.roster.iter().map(|n| LearnerFamily::parse(n)).collect()
    }

    pub fn hpo_families(&self) -> Result<Vec<LearnerFamily>> {
        self.hpo.families.iter().map(|n| LearnerFamily::parse(n)).collect()
    }

    /// Write the fully resolved config next to the run outputs.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_config.json");
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Parse and validate a JSON config. Unknown keys are rejected with the
/// offending key named; defaults are filled for everything omitted.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}
