//! Binary classification metrics with an explicit threshold sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts from comparing thresholded scores against 0/1 labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Threshold metrics. `None` marks a 0/0 case (e.g. precision with no
/// predicted positives), which report writers render as 0.00 with a flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricSet {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricSet {
    /// Value used for ranking; undefined metrics rank below every defined one.
    pub fn get(&self, by: MetricKind) -> Option<f64> {
        match by {
            MetricKind::Accuracy => self.accuracy,
            MetricKind::Sensitivity => self.sensitivity,
            MetricKind::Specificity => self.specificity,
            MetricKind::Precision => self.precision,
            MetricKind::Npv => self.npv,
            MetricKind::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Sensitivity,
    Specificity,
    Precision,
    Npv,
    #[default]
    F1,
}

fn check_inputs(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    if let Some(&v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {v}")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!(
            "label {l} outside {{0, 1}}"
        )));
    }
    Ok(())
}

/// Threshold rule: predicted positive iff score >= threshold.
pub fn confusion_at(scores: &[f64], labels: &[usize], threshold: f64) -> Result<ConfusionMatrix> {
    check_inputs(scores, labels)?;
    let mut cm = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

pub fn metric_set(cm: &ConfusionMatrix) -> MetricSet {
    MetricSet {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        sensitivity: ratio(cm.tp, cm.tp + cm.fn_),
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        precision: ratio(cm.tp, cm.tp + cm.fp),
        npv: ratio(cm.tn, cm.tn + cm.fn_),
        f1: ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
    }
}

/// Area under the ROC curve via the rank statistic (ties contribute 1/2).
/// Errors when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "roc auc undefined with a single class".into(),
        ));
    }
    let mut wins = 0.0;
    for (&sp, &lp) in scores.iter().zip(labels) {
        if lp != 1 {
            continue;
        }
        for (&sn, &ln) in scores.iter().zip(labels) {
            if ln != 0 {
                continue;
            }
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Best point inside the selection window; ties go to the lower threshold.
    pub selected: SweepPoint,
}

/// Sweep thresholds 0.00, 0.01, ..., 1.00 and select the best point by the
/// given metric within [0.2, 0.8]. Undefined metric values never win.
pub fn threshold_sweep(scores: &[f64], labels: &[usize], by: MetricKind) -> Result<SweepResult> {
    check_inputs(scores, labels)?;
    let mut points = Vec::with_capacity(101);
    for i in 0..=100u32 {
        let threshold = i as f64 / 100.0;
        let confusion = confusion_at(scores, labels, threshold)?;
        points.push(SweepPoint {
            threshold,
            confusion,
            metrics: metric_set(&confusion),
        });
    }
    let mut selected: Option<SweepPoint> = None;
    let mut best = f64::NEG_INFINITY;
    for p in &points {
        if p.threshold < 0.2 - 1e-12 || p.threshold > 0.8 + 1e-12 {
            continue;
        }
        if let Some(v) = p.metrics.get(by) {
            if v > best {
                best = v;
                selected = Some(*p);
            }
        }
    }
    let selected = selected.unwrap_or(points[50]); // all undefined in window: fall back to 0.5
    Ok(SweepResult { points, selected })
}
