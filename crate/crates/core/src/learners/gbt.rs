//! Gradient-boosted trees on the second-order logistic objective.
//!
//! Leaf values and split gains follow the gradient/hessian formulation, so
//! lambda (L2), alpha (L1 soft threshold), gamma (minimum split gain),
//! num_leaves, subsample and colsample all carry their usual meanings.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub num_leaves: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub min_child_samples: usize,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 100,
            learning_rate: 0.3,
            max_depth: 6,
            num_leaves: 64,
            lambda: 1.0,
            alpha: 0.0,
            gamma: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            min_child_samples: 1,
            seed: 0,
        }
    }
}

impl GbtParams {
    /// Depth-wise defaults in the XGBoost style.
    pub fn xgb_like(seed: u64) -> Self {
        GbtParams { seed, ..Default::default() }
    }

    /// Leaf-wise defaults in the LightGBM style.
    pub fn lgbm_like(seed: u64) -> Self {
        GbtParams {
            max_depth: 16,
            num_leaves: 31,
            learning_rate: 0.1,
            min_child_samples: 5,
            subsample: 0.9,
            colsample_bytree: 0.9,
            seed,
            ..Default::default()
        }
    }

    /// Shallow, heavily regularized variant.
    pub fn shallow_regularized(seed: u64) -> Self {
        GbtParams {
            max_depth: 4,
            num_leaves: 16,
            learning_rate: 0.1,
            lambda: 3.0,
            n_estimators: 200,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("subsample", self.subsample), ("colsample_bytree", self.colsample_bytree)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in (0, 1], got {v}"
                )));
            }
        }
        if self.max_depth == 0 || self.num_leaves < 2 {
            return Err(Error::InvalidArgument(
                "max_depth must be >= 1 and num_leaves >= 2".into(),
            ));
        }
        if self.lambda < 0.0 || self.alpha < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidArgument(
                "lambda, alpha and gamma must be >= 0".into(),
            ));
        }
        if self.min_child_samples == 0 {
            return Err(Error::InvalidArgument("min_child_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegNode {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RegNode>,
        right: Box<RegNode>,
    },
}

impl RegNode {
    fn value(&self, row: &[f64]) -> f64 {
        match self {
            RegNode::Leaf { weight } => *weight,
            RegNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] < *threshold {
                    left.value(row)
                } else {
                    right.value(row)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegNode>,
    pub d: usize,
}

impl GbtModel {
    pub fn raw(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.value(row)).sum();
        Ok(self.base_score + self.learning_rate * sum)
    }

    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.raw(row)?))
    }
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

fn leaf_weight(g: f64, h: f64, p: &GbtParams) -> f64 {
    -soft_threshold(g, p.alpha) / (h + p.lambda)
}

fn leaf_objective(g: f64, h: f64, p: &GbtParams) -> f64 {
    let s = soft_threshold(g, p.alpha);
    0.5 * s * s / (h + p.lambda)
}

struct Candidate {
    node_rows: Vec<usize>,
    depth: usize,
    gain: f64,
    feature: usize,
    threshold: f64,
    slot: usize, // index into the arena where this node lives
}

/// Best split of a node by second-order gain, over the given feature subset.
fn find_split(
    rows: &ArrayView2<f64>,
    grad: &[f64],
    hess: &[f64],
    idx: &[usize],
    features: &[usize],
    p: &GbtParams,
) -> Option<(f64, usize, f64)> {
    let g_total: f64 = idx.iter().map(|&i| grad[i]).sum();
    let h_total: f64 = idx.iter().map(|&i| hess[i]).sum();
    let parent = leaf_objective(g_total, h_total, p);
    let mut best: Option<(f64, usize, f64)> = None;
    for &f in features {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            rows[[a, f]]
                .partial_cmp(&rows[[b, f]])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut gl = 0.0;
        let mut hl = 0.0;
        for at in 1..order.len() {
            gl += grad[order[at - 1]];
            hl += hess[order[at - 1]];
            let lo = rows[[order[at - 1], f]];
            let hi = rows[[order[at], f]];
            if lo == hi {
                continue;
            }
            if at < p.min_child_samples || order.len() - at < p.min_child_samples {
                continue;
            }
            let gain = leaf_objective(gl, hl, p) + leaf_objective(g_total - gl, h_total - hl, p)
                - parent;
            if gain > p.gamma && best.map_or(true, |(bg, _, _)| gain > bg + 1e-15) {
                best = Some((gain, f, 0.5 * (lo + hi)));
            }
        }
    }
    best
}

/// Grow one regression tree best-first (highest gain expanded first) under
/// the num_leaves / max_depth budget.
fn grow_tree(
    rows: &ArrayView2<f64>,
    grad: &[f64],
    hess: &[f64],
    idx: Vec<usize>,
    features: &[usize],
    p: &GbtParams,
) -> RegNode {
    // Arena of nodes; leaves start as Leaf and may be promoted to Split.
    let mut arena: Vec<RegNode> = Vec::new();
    let make_leaf = |arena: &mut Vec<RegNode>, members: &[usize]| -> usize {
        let g: f64 = members.iter().map(|&i| grad[i]).sum();
        let h: f64 = members.iter().map(|&i| hess[i]).sum();
        arena.push(RegNode::Leaf {
            weight: leaf_weight(g, h, p),
        });
        arena.len() - 1
    };
    let root = make_leaf(&mut arena, &idx);
    let mut frontier: Vec<Candidate> = Vec::new();
    let push_candidate =
        |frontier: &mut Vec<Candidate>, members: Vec<usize>, depth: usize, slot: usize| {
            if depth >= p.max_depth {
                return;
            }
            if let Some((gain, feature, threshold)) =
                find_split(rows, grad, hess, &members, features, p)
            {
                frontier.push(Candidate {
                    node_rows: members,
                    depth,
                    gain,
                    feature,
                    threshold,
                    slot,
                });
            }
        };
    push_candidate(&mut frontier, idx, 0, root);
    let mut leaves = 1;
    let mut links: Vec<(usize, usize, usize)> = Vec::new(); // (parent, left, right)
    while leaves < p.num_leaves && !frontier.is_empty() {
        // Highest gain first; ties toward the earlier candidate.
        let at = frontier
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.gain.partial_cmp(&b.1.gain).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        let c = frontier.swap_remove(at);
        let (li, ri): (Vec<usize>, Vec<usize>) = c
            .node_rows
            .iter()
            .partition(|&&i| rows[[i, c.feature]] < c.threshold);
        let left = make_leaf(&mut arena, &li);
        let right = make_leaf(&mut arena, &ri);
        arena[c.slot] = RegNode::Split {
            feature: c.feature,
            threshold: c.threshold,
            left: Box::new(RegNode::Leaf { weight: 0.0 }),
            right: Box::new(RegNode::Leaf { weight: 0.0 }),
        };
        links.push((c.slot, left, right));
        leaves += 1;
        push_candidate(&mut frontier, li, c.depth + 1, left);
        push_candidate(&mut frontier, ri, c.depth + 1, right);
    }
    // Stitch the arena into an owned tree, children before parents.
    for (parent, left, right) in links.into_iter().rev() {
        let l = arena[left].clone();
        let r = arena[right].clone();
        if let RegNode::Split { left: pl, right: pr, .. } = &mut arena[parent] {
            *pl = Box::new(l);
            *pr = Box::new(r);
        }
    }
    debug_assert_eq!(root, 0);
    arena.into_iter().next().unwrap_or(RegNode::Leaf { weight: 0.0 })
}

pub fn train_gbt(ds: &TabularDataset, params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    if ds.label_names.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "gbt needs binary labels, got {} classes",
            ds.label_names.len()
        )));
    }
    let n = ds.n();
    let d = ds.d();
    let pos = ds.labels.iter().filter(|&&l| l == 1).count() as f64;
    // Base score: log-odds of the base rate, clipped away from infinities.
    let rate = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (rate / (1.0 - rate)).ln();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut raw: Vec<f64> = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let n_rows = ((n as f64 * params.subsample).ceil() as usize).clamp(1, n);
    let n_cols = ((d as f64 * params.colsample_bytree).ceil() as usize).clamp(1, d);
    for _ in 0..params.n_estimators {
        let grad: Vec<f64> = raw
            .iter()
            .zip(&ds.labels)
            .map(|(&z, &y)| sigmoid(z) - y as f64)
            .collect();
        let hess: Vec<f64> = raw
            .iter()
            .map(|&z| {
                let p = sigmoid(z);
                p * (1.0 - p)
            })
            .collect();
        let idx: Vec<usize> = if n_rows == n {
            (0..n).collect()
        } else {
            let mut pool: Vec<usize> = (0..n).collect();
            for i in 0..n_rows {
                let j = rng.gen_range(i..n);
                pool.swap(i, j);
            }
            let mut take = pool[..n_rows].to_vec();
            take.sort_unstable();
            take
        };
        let features: Vec<usize> = if n_cols == d {
            (0..d).collect()
        } else {
            let mut pool: Vec<usize> = (0..d).collect();
            for i in 0..n_cols {
                let j = rng.gen_range(i..d);
                pool.swap(i, j);
            }
            let mut take = pool[..n_cols].to_vec();
            take.sort_unstable();
            take
        };
        let tree = grow_tree(&ds.rows.view(), &grad, &hess, idx, &features, params);
        for (i, row) in ds.rows.outer_iter().enumerate() {
            raw[i] += params.learning_rate * tree.value(row.as_slice().expect("contiguous"));
        }
        trees.push(tree);
    }
    Ok(GbtModel {
        base_score,
        learning_rate: params.learning_rate,
        trees,
        d,
    })
}
