/*!
Experiment toolkit for breast-cancer screening studies over three kinds of
data: electrical-impedance spectra of breast tissue, blood biomarkers, and
breast thermograms.

The crate covers the full pipeline: dataset loading and stratified splitting,
the four tabular enhancement techniques (scale / augment / expand /
polynomial), thermogram preprocessing (mask, crop, resize, normalize,
augment), a Pennes bioheat finite-difference solver that generates labeled
synthetic thermograms, from-scratch learners (linear and logistic regression,
kNN, linear SVM, decision tree, random forest, gradient-boosted trees, and a
small convolutional network with analytic gradients), random / TPE
hyper-parameter search, threshold-swept binary evaluation metrics, and a
design-of-experiments harness that writes CSV reports.

All randomized operations take explicit seeds and are deterministic per seed.
*/

pub mod bioheat;
pub mod config;
pub mod dataset;
pub mod doe;
pub mod eda;
pub mod error;
pub mod evaluation;
pub mod hpo;
pub mod learners;
pub mod tabular;
pub mod thermal;

pub use dataset::{FoldPlan, TabularDataset};
pub use error::{Error, Result};
pub use evaluation::{ConfusionMatrix, MetricSet};
pub use learners::Model;
