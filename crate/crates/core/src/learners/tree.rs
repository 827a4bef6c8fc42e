//! Greedy Gini decision tree with axis-aligned splits.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_gain: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 6,
            min_samples_leaf: 2,
            min_gain: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        score: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn score(&self, row: &[f64]) -> f64 {
        match self {
            Node::Leaf { score } => *score,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] < *threshold {
                    left.score(row)
                } else {
                    right.score(row)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub root: Node,
    pub d: usize,
}

impl TreeModel {
    /// Leaf score = class-1 fraction of the training rows reaching the leaf.
    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        Ok(self.root.score(row))
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exhaustive best Gini split over the given rows and candidate features.
/// Candidate thresholds are midpoints between adjacent distinct values;
/// ties keep the earliest (feature order, then lower threshold).
pub(crate) fn best_split(
    rows: &ArrayView2<f64>,
    labels: &[usize],
    idx: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<BestSplit> {
    let n = idx.len();
    let pos_total = idx.iter().filter(|&&i| labels[i] == 1).count();
    let parent = gini(pos_total, n);
    let mut best: Option<BestSplit> = None;
    for &f in features {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            rows[[a, f]]
                .partial_cmp(&rows[[b, f]])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut pos_left = 0usize;
        for split_at in 1..n {
            if labels[order[split_at - 1]] == 1 {
                pos_left += 1;
            }
            let lo = rows[[order[split_at - 1], f]];
            let hi = rows[[order[split_at], f]];
            if lo == hi {
                continue;
            }
            let nl = split_at;
            let nr = n - split_at;
            if nl < min_samples_leaf || nr < min_samples_leaf {
                continue;
            }
            let gain = parent
                - (nl as f64 / n as f64) * gini(pos_left, nl)
                - (nr as f64 / n as f64) * gini(pos_total - pos_left, nr);
            let threshold = 0.5 * (lo + hi);
            let better = match &best {
                None => true,
                Some(b) => gain > b.gain + 1e-15,
            };
            if better {
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

pub(crate) fn build_node(
    rows: &ArrayView2<f64>,
    labels: &[usize],
    idx: &[usize],
    depth: usize,
    params: &TreeParams,
    feature_sampler: &mut dyn FnMut() -> Vec<usize>,
) -> Node {
    let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
    let leaf = Node::Leaf {
        score: pos as f64 / idx.len() as f64,
    };
    if depth >= params.max_depth || pos == 0 || pos == idx.len() {
        return leaf;
    }
    let features = feature_sampler();
    let split = match best_split(rows, labels, idx, &features, params.min_samples_leaf) {
        Some(s) if s.gain > params.min_gain => s,
        _ => return leaf,
    };
    let (li, ri): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| rows[[i, split.feature]] < split.threshold);
    Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(build_node(rows, labels, &li, depth + 1, params, feature_sampler)),
        right: Box::new(build_node(rows, labels, &ri, depth + 1, params, feature_sampler)),
    }
}

pub fn train_tree(ds: &TabularDataset, params: &TreeParams) -> Result<TreeModel> {
    if params.max_depth == 0 {
        return Err(Error::InvalidArgument("max_depth must be >= 1".into()));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::InvalidArgument("min_samples_leaf must be >= 1".into()));
    }
    let idx: Vec<usize> = (0..ds.n()).collect();
    let all: Vec<usize> = (0..ds.d()).collect();
    let root = build_node(
        &ds.rows.view(),
        &ds.labels,
        &idx,
        0,
        params,
        &mut || all.clone(),
    );
    Ok(TreeModel { root, d: ds.d() })
}
