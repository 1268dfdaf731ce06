//! Point estimators: cross-prediction, classical, split-based
//! prediction-powered inference and the two uncorrected heuristics.

mod objective;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{validate_pair, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::folds::FoldPartition;
use crate::rng::{derive_seed, rng_for, STREAM_NOFOLDS_MODEL, STREAM_PPI_MODEL, STREAM_PPI_SPLIT};
use crate::trainers::{train, Predictor, TrainerSpec};

pub use objective::{DebiasedCdf, PointEstimate};
pub(crate) use objective::{classical_objective, ImputedObjective};

/// Every prediction the cross-prediction estimators and their variance
/// need, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitBundle {
    folds: FoldPartition,
    fold_models: Vec<Predictor>,
    /// `unlabeled_preds[j][i] = f^{(j)}(X̃_i)`.
    unlabeled_preds: Vec<Vec<f64>>,
    /// Indexed like `folds.retained()`.
    oof_preds: Vec<f64>,
    oof_labels: Vec<f64>,
}

pub fn build_bundle(
    models: Vec<Predictor>,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    folds: &FoldPartition,
) -> Result<CrossFitBundle> {
    validate_pair(labeled, unlabeled)?;
    if models.len() != folds.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} fold models for {} folds",
            models.len(),
            folds.k()
        )));
    }
    if folds.n_total() != labeled.len() {
        return Err(Error::DimensionMismatch(format!(
            "fold partition built for {} rows, labeled data has {}",
            folds.n_total(),
            labeled.len()
        )));
    }
    let unlabeled_preds: Vec<Vec<f64>> = models
        .par_iter()
        .map(|m| m.predict(unlabeled.features()))
        .collect();
    let x = labeled.features();
    let oof_preds = folds
        .retained()
        .iter()
        .zip(folds.fold_of())
        .map(|(&r, &j)| {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            models[j].predict_row(&row)
        })
        .collect();
    let oof_labels = folds.retained().iter().map(|&r| labeled.labels()[r]).collect();
    Ok(CrossFitBundle {
        folds: folds.clone(),
        fold_models: models,
        unlabeled_preds,
        oof_preds,
        oof_labels,
    })
}

impl CrossFitBundle {
    pub fn folds(&self) -> &FoldPartition {
        &self.folds
    }

    pub fn fold_models(&self) -> &[Predictor] {
        &self.fold_models
    }

    pub fn k(&self) -> usize {
        self.fold_models.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_preds.first().map_or(0, Vec::len)
    }

    pub fn n_retained(&self) -> usize {
        self.oof_preds.len()
    }

    pub fn unlabeled_preds(&self) -> &[Vec<f64>] {
        &self.unlabeled_preds
    }

    /// Out-of-fold predictions, aligned with `folds().retained()`.
    pub fn oof_preds(&self) -> &[f64] {
        &self.oof_preds
    }

    pub fn oof_labels(&self) -> &[f64] {
        &self.oof_labels
    }

    /// Builds a bundle from raw prediction arrays, bypassing the models.
    /// Used to evaluate the estimators on hand-specified predictions.
    pub fn from_predictions(
        folds: FoldPartition,
        unlabeled_preds: Vec<Vec<f64>>,
        oof_preds: Vec<f64>,
        oof_labels: Vec<f64>,
    ) -> Result<Self> {
        let n = unlabeled_preds.first().map_or(0, Vec::len);
        if unlabeled_preds.len() != folds.k() || unlabeled_preds.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(
                "unlabeled predictions must be K vectors of equal length".into(),
            ));
        }
        if oof_preds.len() != folds.n_retained() || oof_labels.len() != folds.n_retained() {
            return Err(Error::DimensionMismatch(
                "out-of-fold predictions and labels must cover the retained rows".into(),
            ));
        }
        let k = folds.k();
        Ok(Self {
            folds,
            fold_models: (0..k).map(|_| Predictor::constant(f64::NAN)).collect(),
            unlabeled_preds,
            oof_preds,
            oof_labels,
        })
    }

    pub(crate) fn objective<'a>(
        &'a self,
        labeled: &'a LabeledDataset,
        unlabeled: &'a UnlabeledDataset,
        debias: bool,
    ) -> ImputedObjective<'a> {
        let rows: &[usize] = if debias { self.folds.retained() } else { &[] };
        ImputedObjective {
            imputed_features: unlabeled.features(),
            imputed_preds: self.unlabeled_preds.iter().map(Vec::as_slice).collect(),
            debias_features: labeled.features(),
            debias_rows: rows,
            debias_preds: if debias { &self.oof_preds } else { &[] },
            debias_labels: if debias { &self.oof_labels } else { &[] },
        }
    }
}

/// The labeled-only M-estimator.
pub fn estimate_classical(spec: &EstimandSpec, labeled: &LabeledDataset) -> Result<DVector<f64>> {
    spec.validate(Some(labeled.n_features()))?;
    if labeled.is_empty() {
        return Err(Error::InvalidConfig("no labeled rows".into()));
    }
    let obj = classical_objective(labeled.features(), labeled.labels().as_slice());
    Ok(obj.solve(spec)?.theta)
}

/// Cross-prediction mean: imputed average minus the out-of-fold bias.
pub fn estimate_cross_mean(bundle: &CrossFitBundle) -> f64 {
    let preds: Vec<&[f64]> = bundle.unlabeled_preds.iter().map(Vec::as_slice).collect();
    objective::mean_closed_form(&preds, &bundle.oof_preds, &bundle.oof_labels)
}

/// Minimizes the cross-prediction objective for any supported family.
pub fn estimate_cross_general(
    spec: &EstimandSpec,
    bundle: &CrossFitBundle,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
) -> Result<PointEstimate> {
    check_bundle(spec, bundle, labeled, unlabeled)?;
    bundle.objective(labeled, unlabeled, true).solve(spec)
}

/// Minimizes the imputed term alone, ignoring the labels.
pub fn estimate_nodebias(
    spec: &EstimandSpec,
    bundle: &CrossFitBundle,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
) -> Result<PointEstimate> {
    check_bundle(spec, bundle, labeled, unlabeled)?;
    bundle.objective(labeled, unlabeled, false).solve(spec)
}

fn check_bundle(
    spec: &EstimandSpec,
    bundle: &CrossFitBundle,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
) -> Result<()> {
    validate_pair(labeled, unlabeled)?;
    spec.validate(Some(labeled.n_features()))?;
    if bundle.n_unlabeled() != unlabeled.len() || bundle.folds.n_total() != labeled.len() {
        return Err(Error::DimensionMismatch(
            "bundle was built for different datasets".into(),
        ));
    }
    Ok(())
}

/// A single-model fit: one predictor, its imputations, and the labeled rows
/// it is debiased on.
#[derive(Debug, Clone)]
pub struct SingleModelFit {
    pub estimate: PointEstimate,
    pub predictor: Predictor,
    /// Rows used for training.
    pub train_rows: Vec<usize>,
    /// Rows used for debiasing: the holdout for PPI, every row for the
    /// no-folds heuristic.
    pub debias_rows: Vec<usize>,
    pub unlabeled_preds: Vec<f64>,
    pub debias_preds: Vec<f64>,
    pub debias_labels: Vec<f64>,
}

impl SingleModelFit {
    fn assemble(
        spec: &EstimandSpec,
        predictor: Predictor,
        train_rows: Vec<usize>,
        debias_rows: Vec<usize>,
        labeled: &LabeledDataset,
        unlabeled: &UnlabeledDataset,
    ) -> Result<Self> {
        let unlabeled_preds = predictor.predict(unlabeled.features());
        let debias_preds = predictor.predict_rows(labeled.features(), debias_rows.iter().copied());
        let debias_labels = debias_rows.iter().map(|&r| labeled.labels()[r]).collect();
        let mut fit = Self {
            estimate: PointEstimate::plain(DVector::zeros(0)),
            predictor,
            train_rows,
            debias_rows,
            unlabeled_preds,
            debias_preds,
            debias_labels,
        };
        fit.estimate = fit.objective(labeled, unlabeled).solve(spec)?;
        Ok(fit)
    }

    pub(crate) fn objective<'a>(
        &'a self,
        labeled: &'a LabeledDataset,
        unlabeled: &'a UnlabeledDataset,
    ) -> ImputedObjective<'a> {
        ImputedObjective {
            imputed_features: unlabeled.features(),
            imputed_preds: vec![&self.unlabeled_preds],
            debias_features: labeled.features(),
            debias_rows: &self.debias_rows,
            debias_preds: &self.debias_preds,
            debias_labels: &self.debias_labels,
        }
    }
}

/// Trains on a shuffled prefix of `⌊train_fraction · n⌋` rows and debiases on
/// the rest.
pub fn estimate_ppi(
    spec: &EstimandSpec,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    train_fraction: f64,
    trainer: &TrainerSpec,
    seed: u64,
) -> Result<SingleModelFit> {
    validate_pair(labeled, unlabeled)?;
    spec.validate(Some(labeled.n_features()))?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "PPI train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = labeled.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n - n_train < 2 {
        return Err(Error::InvalidConfig(format!(
            "PPI split of {n} rows at fraction {train_fraction} leaves {n_train} training and {} holdout rows",
            n - n_train
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, STREAM_PPI_SPLIT));
    let holdout = order.split_off(n_train);
    let predictor = train(trainer, &labeled.select(&order), derive_seed(seed, STREAM_PPI_MODEL))?;
    SingleModelFit::assemble(spec, predictor, order, holdout, labeled, unlabeled)
}

/// Trains one model on every labeled row and reuses those rows to debias.
pub fn estimate_nofolds(
    spec: &EstimandSpec,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    trainer: &TrainerSpec,
    seed: u64,
) -> Result<SingleModelFit> {
    validate_pair(labeled, unlabeled)?;
    spec.validate(Some(labeled.n_features()))?;
    let predictor = train(trainer, labeled, derive_seed(seed, STREAM_NOFOLDS_MODEL))?;
    let rows: Vec<usize> = (0..labeled.len()).collect();
    SingleModelFit::assemble(spec, predictor, rows.clone(), rows, labeled, unlabeled)
}
