//! Hyper-parameter search: random sampling and a Tree-structured Parzen
//! Estimator over mixed continuous/categorical spaces, with a JSON-lines
//! trial history that can be persisted and resumed.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_kfold, TabularDataset};
use crate::error::{Error, Result};
use crate::evaluation::{threshold_sweep, MetricKind};
use crate::learners::{LearnerFamily, ParamValue, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Dimension {
    Uniform { a: f64, b: f64 },
    LogUniform { a: f64, b: f64 },
    QUniform { a: f64, b: f64, q: f64 },
    Choice { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Dimension order is the sampling order, so it is part of determinism.
    pub dims: Vec<(String, Dimension)>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidArgument("empty search space".into()));
        }
        for (name, dim) in &self.dims {
            let err = |msg: String| Error::InvalidArgument(format!("dimension {name:?}: {msg}"));
            match dim {
                Dimension::Uniform { a, b } => {
                    if !(a < b) {
                        return Err(err(format!("need a < b, got [{a}, {b}]")));
                    }
                }
                Dimension::LogUniform { a, b } => {
                    if !(*a > 0.0 && a < b) {
                        return Err(err(format!("need 0 < a < b, got [{a}, {b}]")));
                    }
                }
                Dimension::QUniform { a, b, q } => {
                    if !(a < b) || !(*q > 0.0) {
                        return Err(err(format!("need a < b and q > 0, got [{a}, {b}] q={q}")));
                    }
                }
                Dimension::Choice { values } => {
                    if values.is_empty() {
                        return Err(err("empty choice list".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: Params,
    /// `None` for failed trials (which never enter density fitting).
    pub loss: Option<f64>,
    pub status: TrialStatus,
    pub duration_ms: u64,
}

impl Trial {
    /// Finite loss of an ok trial.
    pub fn ok_loss(&self) -> f64 {
        self.loss.expect("ok trial has a loss")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
    pub space: SearchSpace,
    pub seed: u64,
}

impl TrialHistory {
    pub fn new(space: SearchSpace, seed: u64) -> TrialHistory {
        TrialHistory {
            trials: Vec::new(),
            space,
            seed,
        }
    }

    pub fn ok_trials(&self) -> Vec<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Ok)
            .collect()
    }

    pub fn best(&self) -> Option<&Trial> {
        self.ok_trials()
            .into_iter()
            .min_by(|a, b| a.ok_loss().partial_cmp(&b.ok_loss()).unwrap())
    }

    /// k lowest-loss ok trials; ties keep the earlier index.
    pub fn top_k(&self, k: usize) -> Result<Vec<&Trial>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.trials.is_empty() {
            return Err(Error::InvalidArgument("empty trial history".into()));
        }
        let mut ok: Vec<(usize, &Trial)> = self
            .trials
            .iter()
            .enumerate()
            .filter(|(_, t)| t.status == TrialStatus::Ok)
            .collect();
        ok.sort_by(|a, b| {
            a.1.ok_loss()
                .partial_cmp(&b.1.ok_loss())
                .unwrap()
                .then(a.0.cmp(&b.0))
        });
        Ok(ok.into_iter().take(k).map(|(_, t)| t).collect())
    }

    /// Append trials to a JSON-lines file, one trial per line.
    pub fn persist_trial(path: &Path, trial: &Trial) -> Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(trial)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path, space: SearchSpace, seed: u64) -> Result<TrialHistory> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut trials = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let trial: Trial = serde_json::from_str(&line).map_err(|e| Error::MalformedFile {
                path: path.into(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            trials.push(trial);
        }
        Ok(TrialHistory {
            trials,
            space,
            seed,
        })
    }
}

fn sample_dim(dim: &Dimension, rng: &mut ChaCha8Rng) -> ParamValue {
    match dim {
        Dimension::Uniform { a, b } => ParamValue::Float(rng.gen_range(*a..*b)),
        Dimension::LogUniform { a, b } => {
            let v = rng.gen_range(a.ln()..b.ln());
            ParamValue::Float(v.exp())
        }
        Dimension::QUniform { a, b, q } => {
            let v = rng.gen_range(*a..*b);
            ParamValue::Float(quantize(v, *a, *b, *q))
        }
        Dimension::Choice { values } => {
            ParamValue::Str(values[rng.gen_range(0..values.len())].clone())
        }
    }
}

fn quantize(v: f64, a: f64, b: f64, q: f64) -> f64 {
    ((v / q).round() * q).clamp(a, b)
}

/// One independent draw from the prior; deterministic per (seed, index).
pub fn suggest_random(space: &SearchSpace, seed: u64, index: u64) -> Result<Params> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e3779b97f4a7c15));
    Ok(space
        .dims
        .iter()
        .map(|(name, dim)| (name.clone(), sample_dim(dim, &mut rng)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup: usize,
    pub seed: u64,
}

impl TpeConfig {
    pub fn new(seed: u64) -> TpeConfig {
        TpeConfig {
            gamma: 0.25,
            n_candidates: 24,
            n_startup: 20,
            seed,
        }
    }
}

/// Standard normal CDF via an erf approximation (Abramowitz–Stegun 7.1.26).
fn normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    let erf = if x < 0.0 { -erf } else { erf };
    0.5 * (1.0 + erf)
}

/// Truncated-Gaussian Parzen mixture over [a, b] in the working coordinate.
struct Parzen {
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
    a: f64,
    b: f64,
}

impl Parzen {
    /// Bandwidth per center: max distance to adjacent sorted neighbors,
    /// floored at (b - a) / min(100, n).
    fn fit(mut centers: Vec<f64>, a: f64, b: f64) -> Parzen {
        centers.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = centers.len();
        let floor = (b - a) / 100f64.min(n as f64).max(1.0);
        let bandwidths = (0..n)
            .map(|i| {
                let left = if i > 0 { centers[i] - centers[i - 1] } else { 0.0 };
                let right = if i + 1 < n {
                    centers[i + 1] - centers[i]
                } else {
                    0.0
                };
                left.max(right).max(floor)
            })
            .collect();
        Parzen {
            centers,
            bandwidths,
            a,
            b,
        }
    }

    fn density(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for (&mu, &sigma) in self.centers.iter().zip(&self.bandwidths) {
            // Truncated normal pdf renormalized over [a, b].
            let mass = normal_cdf((self.b - mu) / sigma) - normal_cdf((self.a - mu) / sigma);
            if mass <= 0.0 {
                continue;
            }
            let z = (x - mu) / sigma;
            let pdf = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            total += pdf / mass;
        }
        total / self.centers.len() as f64
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        // Pick a component, then rejection-sample its truncation.
        let i = rng.gen_range(0..self.centers.len());
        let (mu, sigma) = (self.centers[i], self.bandwidths[i]);
        for _ in 0..1000 {
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let x = mu + sigma * z;
            if x >= self.a && x <= self.b {
                return x;
            }
        }
        // Pathological truncation: fall back to the prior.
        rng.gen_range(self.a..self.b)
    }
}

/// Working-coordinate view of one dimension (log space for loguniform,
/// continuous for quniform).
fn working_bounds(dim: &Dimension) -> (f64, f64) {
    match dim {
        Dimension::Uniform { a, b } => (*a, *b),
        Dimension::LogUniform { a, b } => (a.ln(), b.ln()),
        Dimension::QUniform { a, b, .. } => (*a, *b),
        Dimension::Choice { .. } => (0.0, 0.0),
    }
}

fn to_working(dim: &Dimension, v: &ParamValue) -> Option<f64> {
    let v = v.as_f64()?;
    Some(match dim {
        Dimension::LogUniform { .. } => v.ln(),
        _ => v,
    })
}

fn from_working(dim: &Dimension, x: f64) -> ParamValue {
    match dim {
        Dimension::Uniform { .. } => ParamValue::Float(x),
        Dimension::LogUniform { .. } => ParamValue::Float(x.exp()),
        Dimension::QUniform { a, b, q } => ParamValue::Float(quantize(x, *a, *b, *q)),
        Dimension::Choice { .. } => unreachable!("choice handled separately"),
    }
}

/// TPE suggestion. Below `n_startup` ok-trials this degenerates to random
/// search; afterwards candidates are drawn from the good-set density l and
/// ranked by l/g.
pub fn suggest_tpe(space: &SearchSpace, history: &TrialHistory, config: &TpeConfig) -> Result<Params> {
    space.validate()?;
    let ok: Vec<&Trial> = history.ok_trials();
    let index = history.trials.len() as u64;
    if ok.len() < config.n_startup {
        return suggest_random(space, config.seed, index);
    }
    let mut order: Vec<usize> = (0..ok.len()).collect();
    order.sort_by(|&a, &b| {
        ok[a]
            .ok_loss()
            .partial_cmp(&ok[b].ok_loss())
            .unwrap()
            .then(a.cmp(&b))
    });
    let n_good = ((config.gamma * ok.len() as f64).ceil() as usize).clamp(1, ok.len());
    let good: Vec<&Trial> = order[..n_good].iter().map(|&i| ok[i]).collect();
    let bad: Vec<&Trial> = order[n_good..].iter().map(|&i| ok[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(
        config.seed ^ index.wrapping_mul(0x2545f4914f6cdd1d),
    );
    let mut out = Params::new();
    for (name, dim) in &space.dims {
        match dim {
            Dimension::Choice { values } => {
                // Add-one-smoothed categorical counts for both sets.
                let counts = |set: &[&Trial]| -> Vec<f64> {
                    let mut c = vec![1.0; values.len()];
                    for t in set {
                        if let Some(ParamValue::Str(s)) = t.params.get(name) {
                            if let Some(at) = values.iter().position(|v| v == s) {
                                c[at] += 1.0;
                            }
                        }
                    }
                    let total: f64 = c.iter().sum();
                    c.into_iter().map(|v| v / total).collect()
                };
                let l = counts(&good);
                let g = counts(&bad);
                // Draw candidates from l, keep the best l/g ratio.
                let mut best: Option<(f64, usize)> = None;
                for _ in 0..config.n_candidates {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = values.len() - 1;
                    for (i, &p) in l.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    let score = l[pick] / g[pick];
                    if best.map_or(true, |(s, _)| score > s) {
                        best = Some((score, pick));
                    }
                }
                out.insert(
                    name.clone(),
                    ParamValue::Str(values[best.unwrap().1].clone()),
                );
            }
            _ => {
                let (a, b) = working_bounds(dim);
                let collect = |set: &[&Trial]| -> Vec<f64> {
                    set.iter()
                        .filter_map(|t| t.params.get(name).and_then(|v| to_working(dim, v)))
                        .collect()
                };
                let good_pts = collect(&good);
                let bad_pts = collect(&bad);
                if good_pts.is_empty() || bad_pts.is_empty() {
                    // Degenerate sets: fall back to the prior for this dim.
                    out.insert(name.clone(), sample_dim(dim, &mut rng));
                    continue;
                }
                let l = Parzen::fit(good_pts, a, b);
                let g = Parzen::fit(bad_pts, a, b);
                let mut best: Option<(f64, f64)> = None;
                for _ in 0..config.n_candidates {
                    let x = l.sample(&mut rng);
                    let score = l.density(x) / g.density(x).max(1e-300);
                    if best.map_or(true, |(s, _)| score > s) {
                        best = Some((score, x));
                    }
                }
                out.insert(name.clone(), from_working(dim, best.unwrap().1));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Random,
    #[default]
    Tpe,
}

/// Sequential suggest -> evaluate -> append loop. Objective panics are
/// captured as failed trials; each trial is appended to `persist` (JSON
/// lines) as soon as it finishes.
pub fn optimize<F>(
    objective: F,
    space: &SearchSpace,
    n_iters: usize,
    algo: Algo,
    seed: u64,
    persist: Option<&Path>,
) -> Result<TrialHistory>
where
    F: Fn(&Params) -> Result<f64>,
{
    space.validate()?;
    let mut history = TrialHistory::new(space.clone(), seed);
    let config = TpeConfig::new(seed);
    for i in 0..n_iters {
        let params = match algo {
            Algo::Random => suggest_random(space, seed, i as u64)?,
            Algo::Tpe => suggest_tpe(space, &history, &config)?,
        };
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| objective(&params)));
        let duration_ms = started.elapsed().as_millis() as u64;
        let trial = match outcome {
            Ok(Ok(loss)) if loss.is_finite() => Trial {
                params,
                loss: Some(loss),
                status: TrialStatus::Ok,
                duration_ms,
            },
            _ => Trial {
                params,
                loss: None,
                status: TrialStatus::Failed,
                duration_ms,
            },
        };
        if let Some(path) = persist {
            TrialHistory::persist_trial(path, &trial)?;
        }
        history.trials.push(trial);
    }
    Ok(history)
}

/// Loss = 1 − mean validation metric over stratified k-fold CV.
pub fn cv_objective(
    family: LearnerFamily,
    ds: &TabularDataset,
    folds: usize,
    metric: MetricKind,
    seed: u64,
) -> impl Fn(&Params) -> Result<f64> + '_ {
    move |params: &Params| {
        let plan = stratified_kfold(ds, folds, seed)?;
        let mut total = 0.0;
        for fold in 0..folds {
            let (train_idx, val_idx) = plan.fold(fold);
            let train = ds.subset(&train_idx);
            let val = ds.subset(&val_idx);
            let model = family.train(&train, params, seed.wrapping_add(fold as u64))?;
            let scores = model.predict_scores(&val)?;
            let sweep = threshold_sweep(&scores, &val.labels, metric)?;
            total += sweep.selected.metrics.get(metric).unwrap_or(0.0);
        }
        Ok(1.0 - total / folds as f64)
    }
}

/// Preset space for the depth-wise GBT family.
pub fn gbt_x_space() -> SearchSpace {
    SearchSpace {
        dims: vec![
            ("learning_rate".into(), Dimension::LogUniform { a: 0.01, b: 0.5 }),
            ("gamma".into(), Dimension::Uniform { a: 0.0, b: 0.5 }),
            ("max_depth".into(), Dimension::QUniform { a: 2.0, b: 10.0, q: 1.0 }),
            ("lambda".into(), Dimension::LogUniform { a: 0.1, b: 10.0 }),
            ("alpha".into(), Dimension::LogUniform { a: 1e-3, b: 1.0 }),
            ("num_leaves".into(), Dimension::QUniform { a: 4.0, b: 64.0, q: 1.0 }),
            ("colsample_bytree".into(), Dimension::Uniform { a: 0.5, b: 1.0 }),
            ("n_estimators".into(), Dimension::QUniform { a: 20.0, b: 200.0, q: 10.0 }),
        ],
    }
}

/// Preset space for the leaf-wise GBT family.
pub fn gbt_l_space() -> SearchSpace {
    SearchSpace {
        dims: vec![
            ("learning_rate".into(), Dimension::LogUniform { a: 0.01, b: 0.5 }),
            ("alpha".into(), Dimension::LogUniform { a: 1e-3, b: 1.0 }),
            ("lambda".into(), Dimension::LogUniform { a: 0.1, b: 10.0 }),
            ("n_estimators".into(), Dimension::QUniform { a: 20.0, b: 200.0, q: 10.0 }),
            ("num_leaves".into(), Dimension::QUniform { a: 4.0, b: 64.0, q: 1.0 }),
            ("subsample".into(), Dimension::Uniform { a: 0.5, b: 1.0 }),
            ("min_child_samples".into(), Dimension::QUniform { a: 1.0, b: 20.0, q: 1.0 }),
        ],
    }
}

pub fn preset_space(family: LearnerFamily) -> Result<SearchSpace> {
    match family {
        LearnerFamily::GbtX | LearnerFamily::GbtC => Ok(gbt_x_space()),
        LearnerFamily::GbtL => Ok(gbt_l_space()),
        other => Err(Error::InvalidArgument(format!(
            "no preset search space for {}",
            other.name()
        ))),
    }
}
