//! Random forest: bagged Gini trees with per-split column subsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{build_node, Node, TreeParams};
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    /// Fraction of features drawn (without replacement) at every split.
    pub colsample: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            tree: TreeParams {
                max_depth: 8,
                min_samples_leaf: 1,
                min_gain: 1e-7,
            },
            bootstrap: true,
            colsample: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Node>,
    pub d: usize,
}

impl ForestModel {
    /// Mean of the trees' leaf scores.
    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        let sum: f64 = self
            .trees
            .iter()
            .map(|t| score_node(t, row))
            .sum();
        Ok(sum / self.trees.len() as f64)
    }
}

fn score_node(node: &Node, row: &[f64]) -> f64 {
    match node {
        Node::Leaf { score } => *score,
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if row[*feature] < *threshold {
                score_node(left, row)
            } else {
                score_node(right, row)
            }
        }
    }
}

pub fn train_forest(ds: &TabularDataset, params: &ForestParams) -> Result<ForestModel> {
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    if !(params.colsample > 0.0 && params.colsample <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "colsample must be in (0, 1], got {}",
            params.colsample
        )));
    }
    let n = ds.n();
    let d = ds.d();
    let n_cols = ((d as f64 * params.colsample).ceil() as usize).clamp(1, d);
    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| master.gen()).collect();
    let trees = tree_seeds
        .into_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut sampler = || {
                if n_cols == d {
                    (0..d).collect::<Vec<usize>>()
                } else {
                    // Partial Fisher-Yates draw of n_cols distinct features.
                    let mut pool: Vec<usize> = (0..d).collect();
                    for i in 0..n_cols {
                        let j = rng.gen_range(i..d);
                        pool.swap(i, j);
                    }
                    let mut cols = pool[..n_cols].to_vec();
                    cols.sort_unstable();
                    cols
                }
            };
            build_node(&ds.rows.view(), &ds.labels, &idx, 0, &params.tree, &mut sampler)
        })
        .collect();
    Ok(ForestModel { trees, d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::tree::train_tree;

    #[test]
    fn single_tree_no_sampling_reduces_to_tree() {
        let ds = super::super::tests::toy_dataset(30, 3, 6);
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            colsample: 1.0,
            tree: TreeParams::default(),
            seed: 1,
        };
        let forest = train_forest(&ds, &params).unwrap();
        let tree = train_tree(&ds, &TreeParams::default()).unwrap();
        for row in ds.rows.outer_iter() {
            let r = row.as_slice().unwrap();
            assert_eq!(
                forest.predict_score(r).unwrap(),
                tree.predict_score(r).unwrap()
            );
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = super::super::tests::toy_dataset(30, 4, 7);
        let params = ForestParams {
            n_trees: 12,
            seed: 42,
            ..Default::default()
        };
        let a = train_forest(&ds, &params).unwrap();
        let b = train_forest(&ds, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_fits_training_data_reasonably() {
        let ds = super::super::tests::toy_dataset(60, 3, 8);
        let forest = train_forest(&ds, &ForestParams { n_trees: 30, seed: 3, ..Default::default() })
            .unwrap();
        let correct = ds
            .rows
            .outer_iter()
            .zip(&ds.labels)
            .filter(|(r, &l)| {
                (forest.predict_score(r.as_slice().unwrap()).unwrap() >= 0.5) == (l == 1)
            })
            .count();
        assert!(correct >= 54, "{correct}/60");
    }
}
