//! Black-box learners used to impute labels.
//!
//! Every learner is a pure function of `(spec, data, seed)`; none of the
//! built-in ones is randomized, so the seed only matters to wrappers that
//! need it. All learners fit an intercept.

mod knn;
mod ridge;
mod stumps;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::folds::FoldPartition;
use crate::rng::{derive_seed, STREAM_FOLD_MODELS};

pub use knn::KnnModel;
pub use ridge::LinearModel;
pub use stumps::StumpEnsemble;

/// Learner choice and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerKind {
    /// Ridge regression; the intercept is not penalized.
    Ridge { lambda: f64 },
    /// L2 gradient boosting with depth-1 trees.
    BoostedStumps {
        rounds: usize,
        learning_rate: f64,
        min_leaf: usize,
    },
    /// Mean label of the `k` nearest training rows.
    Knn { k: usize },
    /// Inner learner with a constant added to every prediction.
    Biased { inner: Box<TrainerKind>, offset: f64 },
    /// Predicts the training-label mean everywhere.
    LabelMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerSpec {
    #[serde(flatten)]
    pub kind: TrainerKind,
    #[serde(default)]
    pub seed_salt: u64,
}

impl TrainerSpec {
    pub fn new(kind: TrainerKind) -> Self {
        Self { kind, seed_salt: 0 }
    }

    pub fn ridge(lambda: f64) -> Self {
        Self::new(TrainerKind::Ridge { lambda })
    }

    pub fn boosted_stumps(rounds: usize, learning_rate: f64, min_leaf: usize) -> Self {
        Self::new(TrainerKind::BoostedStumps {
            rounds,
            learning_rate,
            min_leaf,
        })
    }

    /// `rounds = 200, learning_rate = 0.1, min_leaf = 5`.
    pub fn default_stumps() -> Self {
        Self::boosted_stumps(200, 0.1, 5)
    }

    pub fn knn(k: usize) -> Self {
        Self::new(TrainerKind::Knn { k })
    }

    pub fn biased(inner: TrainerSpec, offset: f64) -> Self {
        Self {
            kind: TrainerKind::Biased {
                inner: Box::new(inner.kind),
                offset,
            },
            seed_salt: inner.seed_salt,
        }
    }

    pub fn label_mean() -> Self {
        Self::new(TrainerKind::LabelMean)
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()
    }
}

impl TrainerKind {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            TrainerKind::Ridge { lambda } if !(*lambda >= 0.0 && lambda.is_finite()) => {
                bad(format!("ridge lambda must be a finite nonnegative number, got {lambda}"))
            }
            TrainerKind::BoostedStumps { rounds: 0, .. } => bad("boosting rounds must be positive".into()),
            TrainerKind::BoostedStumps { learning_rate, .. }
                if !(*learning_rate > 0.0 && *learning_rate <= 1.0) =>
            {
                bad(format!("learning rate must lie in (0,1], got {learning_rate}"))
            }
            TrainerKind::BoostedStumps { min_leaf: 0, .. } => bad("min_leaf must be positive".into()),
            TrainerKind::Knn { k: 0 } => bad("k must be positive".into()),
            TrainerKind::Biased { inner, offset } => {
                if !offset.is_finite() {
                    return bad(format!("offset must be finite, got {offset}"));
                }
                inner.validate()
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TrainerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.kind, f)
    }
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainerKind::Ridge { lambda } => write!(f, "ridge:{lambda}"),
            TrainerKind::BoostedStumps {
                rounds,
                learning_rate,
                min_leaf,
            } => write!(f, "stumps:{rounds}:{learning_rate}:{min_leaf}"),
            TrainerKind::Knn { k } => write!(f, "knn:{k}"),
            TrainerKind::Biased { inner, offset } => write!(f, "biased:{offset}:{inner}"),
            TrainerKind::LabelMean => write!(f, "mean"),
        }
    }
}

/// Parses `ridge:<lambda>`, `stumps[:<rounds>:<lr>:<min_leaf>]`, `knn:<k>`,
/// `biased:<offset>:<inner>` or `mean`.
impl FromStr for TrainerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        fn parse_kind(s: &str) -> Result<TrainerKind> {
            let bad = || Error::InvalidConfig(format!("cannot parse trainer '{s}'"));
            let parts: Vec<&str> = s.trim().splitn(3, ':').collect();
            let kind = match parts.as_slice() {
                ["mean"] => TrainerKind::LabelMean,
                ["ridge", l] => TrainerKind::Ridge {
                    lambda: l.parse().map_err(|_| bad())?,
                },
                ["stumps"] => TrainerSpec::default_stumps().kind,
                ["stumps", r, rest] => {
                    let (lr, leaf) = rest.split_once(':').ok_or_else(bad)?;
                    TrainerKind::BoostedStumps {
                        rounds: r.parse().map_err(|_| bad())?,
                        learning_rate: lr.parse().map_err(|_| bad())?,
                        min_leaf: leaf.parse().map_err(|_| bad())?,
                    }
                }
                ["knn", k] => TrainerKind::Knn {
                    k: k.parse().map_err(|_| bad())?,
                },
                ["biased", off, inner] => TrainerKind::Biased {
                    offset: off.parse().map_err(|_| bad())?,
                    inner: Box::new(parse_kind(inner)?),
                },
                _ => return Err(bad()),
            };
            kind.validate()?;
            Ok(kind)
        }
        Ok(TrainerSpec::new(parse_kind(s)?))
    }
}

/// A fitted predictor: features to predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    model: Model,
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Constant(f64),
    Linear(LinearModel),
    Stumps(StumpEnsemble),
    Knn(KnnModel),
    Shifted(Box<Model>, f64),
}

impl Model {
    fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Model::Constant(c) => *c,
            Model::Linear(m) => m.predict_row(row),
            Model::Stumps(m) => m.predict_row(row),
            Model::Knn(m) => m.predict_row(row),
            Model::Shifted(inner, offset) => inner.predict_row(row) + offset,
        }
    }
}

impl Predictor {
    pub fn constant(value: f64) -> Self {
        Self {
            model: Model::Constant(value),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.model.predict_row(row)
    }

    /// One prediction per row of `features`.
    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<f64> {
        self.predict_rows(features, 0..features.nrows())
    }

    pub fn predict_rows(
        &self,
        features: &DMatrix<f64>,
        rows: impl IntoIterator<Item = usize>,
    ) -> Vec<f64> {
        let p = features.ncols();
        let mut buf = vec![0.0; p];
        rows.into_iter()
            .map(|i| {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = features[(i, j)];
                }
                self.model.predict_row(&buf)
            })
            .collect()
    }
}

/// Fits one predictor.
pub fn train(spec: &TrainerSpec, data: &LabeledDataset, seed: u64) -> Result<Predictor> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }
    let model = fit_kind(&spec.kind, data, derive_seed(seed, spec.seed_salt))?;
    Ok(Predictor { model })
}

// every built-in learner is deterministic; the seed is threaded through for
// learners that are not
#[allow(clippy::only_used_in_recursion)]
fn fit_kind(kind: &TrainerKind, data: &LabeledDataset, seed: u64) -> Result<Model> {
    Ok(match kind {
        TrainerKind::Ridge { lambda } => Model::Linear(ridge::fit(data, *lambda)?),
        TrainerKind::BoostedStumps {
            rounds,
            learning_rate,
            min_leaf,
        } => Model::Stumps(stumps::fit(data, *rounds, *learning_rate, *min_leaf)),
        TrainerKind::Knn { k } => Model::Knn(knn::fit(data, *k)?),
        TrainerKind::Biased { inner, offset } => {
            Model::Shifted(Box::new(fit_kind(inner, data, seed)?), *offset)
        }
        TrainerKind::LabelMean => Model::Constant(crate::linalg::mean(data.labels().as_slice())),
    })
}

/// Seed for fold model `j`: `seed ⊕ hash(j)`.
pub fn fold_model_seed(seed: u64, j: usize) -> u64 {
    derive_seed(seed, STREAM_FOLD_MODELS + j as u64)
}

/// Trains model `j` on the retained rows outside fold `j`, for every fold.
pub fn train_fold_models(
    spec: &TrainerSpec,
    data: &LabeledDataset,
    folds: &FoldPartition,
    seed: u64,
) -> Result<Vec<Predictor>> {
    train_fold_models_with(data, folds, seed, |subset, _rows, s| train(spec, subset, s))
}

/// [`train_fold_models`] with an arbitrary fitting closure, which also
/// receives the labeled-row indices of its training set.
pub fn train_fold_models_with<F>(
    data: &LabeledDataset,
    folds: &FoldPartition,
    seed: u64,
    fit: F,
) -> Result<Vec<Predictor>>
where
    F: Fn(&LabeledDataset, &[usize], u64) -> Result<Predictor> + Sync,
{
    if folds.n_total() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "fold partition built for {} rows, dataset has {}",
            folds.n_total(),
            data.len()
        )));
    }
    (0..folds.k())
        .into_par_iter()
        .map(|j| {
            let rows = folds.training_rows(j);
            fit(&data.select(&rows), &rows, fold_model_seed(seed, j))
        })
        .collect()
}
