//! From-scratch learner families. Every classifier exposes
//! `predict_score` in [0,1] so the evaluation layer can threshold uniformly.

pub mod forest;
pub mod gbt;
pub mod knn;
pub mod linear;
pub mod logistic;
pub mod nn;
pub mod svm;
pub mod tree;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

pub use forest::{train_forest, ForestModel, ForestParams};
pub use gbt::{train_gbt, GbtModel, GbtParams};
pub use knn::{train_knn, KnnModel};
pub use linear::{train_linear, LinearModel};
pub use logistic::{train_logistic, LogisticModel};
pub use nn::{nn_gradient_check, nn_train, Network, NetworkSpec};
pub use svm::{train_linear_svm, SvmModel};
pub use tree::{train_tree, TreeModel, TreeParams};

/// A trained model of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Logistic(LogisticModel),
    Knn(KnnModel),
    LinearSvm(SvmModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Gbt(GbtModel),
    Network(Network),
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VersionedModel {
    version: u32,
    model: Model,
}

impl Model {
    /// Score for one tabular row. Image networks reject tabular input.
    pub fn predict_score(&self, row: &[f64]) -> Result<f64> {
        let score = match self {
            Model::Linear(m) => m.predict_score(row)?,
            Model::Logistic(m) => m.predict_score(row)?,
            Model::Knn(m) => m.predict_score(row)?,
            Model::LinearSvm(m) => m.predict_score(row)?,
            Model::Tree(m) => m.predict_score(row)?,
            Model::Forest(m) => m.predict_score(row)?,
            Model::Gbt(m) => m.predict_score(row)?,
            Model::Network(_) => {
                return Err(Error::Model(
                    "network models score images, not tabular rows".into(),
                ))
            }
        };
        debug_assert!((0.0..=1.0).contains(&score), "score {score} out of range");
        Ok(score)
    }

    pub fn predict_scores(&self, ds: &TabularDataset) -> Result<Vec<f64>> {
        ds.rows
            .outer_iter()
            .map(|r| self.predict_score(r.as_slice().expect("contiguous")))
            .collect()
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Model::Linear(_) => "linear",
            Model::Logistic(_) => "logistic",
            Model::Knn(_) => "knn",
            Model::LinearSvm(_) => "svm",
            Model::Tree(_) => "tree",
            Model::Forest(_) => "forest",
            Model::Gbt(_) => "gbt",
            Model::Network(_) => "network",
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let wrapper = VersionedModel {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string_pretty(&wrapper)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Model> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let wrapper: VersionedModel = serde_json::from_str(&json)?;
        if wrapper.version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format version {}",
                wrapper.version
            )));
        }
        Ok(wrapper.model)
    }
}

/// Weight tensors persist as base64 of little-endian 32-bit reals.
pub(crate) fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

pub(crate) fn decode_f32(encoded: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(encoded)
        .map_err(|e| Error::Model(format!("bad tensor encoding: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Model("tensor byte length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Serde adapter for Vec<f64> fields stored in the base64-f32 form.
pub(crate) mod tensor_b64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::encode_f32(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let encoded = String::deserialize(d)?;
        super::decode_f32(&encoded).map_err(serde::de::Error::custom)
    }
}

/// Free-form hyper-parameter assignment, as produced by the search layer.
pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Str(_) => None,
        }
    }
}

fn param_f64(params: &Params, name: &str, default: f64) -> f64 {
    params.get(name).and_then(|v| v.as_f64()).unwrap_or(default)
}

/// The nine-model roster used by the experiment grid. The three GBT entries
/// carry different default parameterizations (depth-wise, leaf-wise, and a
/// shallow heavily-regularized variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerFamily {
    Linear,
    Logistic,
    Tree,
    Forest,
    Svm,
    Knn,
    GbtX,
    GbtL,
    GbtC,
}

pub const ROSTER: [LearnerFamily; 9] = [
    LearnerFamily::Linear,
    LearnerFamily::Logistic,
    LearnerFamily::Tree,
    LearnerFamily::Forest,
    LearnerFamily::Svm,
    LearnerFamily::Knn,
    LearnerFamily::GbtX,
    LearnerFamily::GbtL,
    LearnerFamily::GbtC,
];

impl LearnerFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerFamily::Linear => "linear",
            LearnerFamily::Logistic => "logistic",
            LearnerFamily::Tree => "tree",
            LearnerFamily::Forest => "forest",
            LearnerFamily::Svm => "svm",
            LearnerFamily::Knn => "knn",
            LearnerFamily::GbtX => "gbt_x",
            LearnerFamily::GbtL => "gbt_l",
            LearnerFamily::GbtC => "gbt_c",
        }
    }

    pub fn parse(name: &str) -> Result<LearnerFamily> {
        ROSTER
            .iter()
            .copied()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown learner family {name:?}")))
    }

    /// Train with defaults overridden by any matching entries in `params`.
    pub fn train(&self, ds: &TabularDataset, params: &Params, seed: u64) -> Result<Model> {
        match self {
            LearnerFamily::Linear => {
                Ok(Model::Linear(train_linear(ds, param_f64(params, "l2", 1.0))?))
            }
            LearnerFamily::Logistic => Ok(Model::Logistic(train_logistic(
                ds,
                param_f64(params, "lr", 0.1),
                param_f64(params, "iters", 500.0) as usize,
                param_f64(params, "l2", 0.01),
            )?)),
            LearnerFamily::Tree => Ok(Model::Tree(train_tree(
                ds,
                &TreeParams {
                    max_depth: param_f64(params, "max_depth", 6.0) as usize,
                    min_samples_leaf: param_f64(params, "min_samples_leaf", 2.0) as usize,
                    min_gain: param_f64(params, "min_gain", 1e-7),
                },
            )?)),
            LearnerFamily::Forest => Ok(Model::Forest(train_forest(
                ds,
                &ForestParams {
                    n_trees: param_f64(params, "n_trees", 100.0) as usize,
                    tree: TreeParams {
                        max_depth: param_f64(params, "max_depth", 8.0) as usize,
                        min_samples_leaf: param_f64(params, "min_samples_leaf", 1.0) as usize,
                        min_gain: param_f64(params, "min_gain", 1e-7),
                    },
                    bootstrap: param_f64(params, "bootstrap", 1.0) != 0.0,
                    colsample: param_f64(params, "colsample", 0.6),
                    seed,
                },
            )?)),
            LearnerFamily::Svm => Ok(Model::LinearSvm(train_linear_svm(
                ds,
                param_f64(params, "c", 1.0),
                param_f64(params, "iters", 500.0) as usize,
            )?)),
            LearnerFamily::Knn => Ok(Model::Knn(train_knn(
                ds,
                param_f64(params, "k", 5.0) as usize,
            )?)),
            LearnerFamily::GbtX => Ok(Model::Gbt(train_gbt(
                ds,
                &gbt_params_from(params, GbtParams::xgb_like(seed)),
            )?)),
            LearnerFamily::GbtL => Ok(Model::Gbt(train_gbt(
                ds,
                &gbt_params_from(params, GbtParams::lgbm_like(seed)),
            )?)),
            LearnerFamily::GbtC => Ok(Model::Gbt(train_gbt(
                ds,
                &gbt_params_from(params, GbtParams::shallow_regularized(seed)),
            )?)),
        }
    }
}

/// Overlay search-space parameter names onto a base GBT configuration.
pub fn gbt_params_from(params: &Params, mut base: GbtParams) -> GbtParams {
    base.n_estimators = param_f64(params, "n_estimators", base.n_estimators as f64) as usize;
    base.learning_rate = param_f64(params, "learning_rate", base.learning_rate);
    base.max_depth = param_f64(params, "max_depth", base.max_depth as f64) as usize;
    base.num_leaves = param_f64(params, "num_leaves", base.num_leaves as f64) as usize;
    base.lambda = param_f64(params, "lambda", base.lambda);
    base.alpha = param_f64(params, "alpha", base.alpha);
    base.gamma = param_f64(params, "gamma", base.gamma);
    base.subsample = param_f64(params, "subsample", base.subsample);
    base.colsample_bytree = param_f64(params, "colsample_bytree", base.colsample_bytree);
    base.min_child_samples = param_f64(params, "min_child_samples", base.min_child_samples as f64) as usize;
    base
}
