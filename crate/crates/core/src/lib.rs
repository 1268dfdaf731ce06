//! Cross-prediction: semi-supervised M-estimation that imputes missing
//! labels with cross-fitted machine-learning models, removes the imputation
//! bias with the labeled sample, and estimates the variance by bootstrapping
//! the training algorithm.
//!
//! Baselines (classical, split-based prediction-powered inference and two
//! uncorrected heuristics) share the same interfaces, and [`sim`] runs the
//! synthetic coverage experiments.

pub mod data;
pub mod error;
pub mod estimators;
pub mod estimand;
pub mod folds;
pub mod inference;
pub mod linalg;
pub mod losses;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sim;
pub mod trainers;

pub use data::{validate_pair, LabeledDataset, UnlabeledDataset};
pub use error::{Error, Result};
pub use estimand::{EstimandSpec, GlmFamily};
pub use folds::{make_folds, FoldPartition};
pub use trainers::{train, train_fold_models, Predictor, TrainerKind, TrainerSpec};
pub use estimators::{build_bundle, CrossFitBundle, PointEstimate};
pub use inference::{BootstrapConfig, Resampling, VarianceReport};
pub use pipeline::{run_method, run_methods, MethodSettings};
pub use report::{IntervalReport, Method, VarianceDiagnostics};
