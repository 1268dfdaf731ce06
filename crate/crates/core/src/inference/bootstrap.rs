//! Bootstrapping the training algorithm to approximate the average model and
//! the spread of out-of-sample residuals.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::folds::FoldPartition;
use crate::linalg::sample_variance;
use crate::rng::{derive_seed, rng_for, STREAM_BOOTSTRAP, STREAM_BOOT_MODELS};
use crate::trainers::{train, Predictor, TrainerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    WithoutReplacement,
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// Defaults to `n' − n'/K`, the size of a cross-fitting training set.
    pub resample_size: Option<usize>,
    pub seed: u64,
    pub resampling: Resampling,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            resample_size: None,
            seed,
            resampling: Resampling::WithoutReplacement,
        }
    }

    pub fn resolved_size(&self, folds: &FoldPartition) -> usize {
        self.resample_size
            .unwrap_or(folds.n_retained() - folds.fold_size())
    }

    fn validate(&self, folds: &FoldPartition) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("bootstrap needs at least one replicate".into()));
        }
        let size = self.resolved_size(folds);
        if size == 0 || size > folds.n_retained() {
            return Err(Error::InvalidConfig(format!(
                "bootstrap resample size {size} must lie in 1..={}",
                folds.n_retained()
            )));
        }
        Ok(())
    }
}

/// `B` retrained models with the labeled rows each one did not see.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapModels {
    pub models: Vec<Predictor>,
    /// Sorted row indices of each resample (repeats allowed with
    /// replacement).
    pub samples: Vec<Vec<usize>>,
    /// Retained rows absent from each resample, ascending.
    pub complements: Vec<Vec<usize>>,
}

/// Draws the resample of replicate `b` from the retained rows.
fn resample(folds: &FoldPartition, config: &BootstrapConfig, b: usize) -> Vec<usize> {
    let pool = folds.retained();
    let size = config.resolved_size(folds);
    let mut rng = rng_for(derive_seed(config.seed, STREAM_BOOTSTRAP), b as u64);
    let mut rows: Vec<usize> = match config.resampling {
        Resampling::WithoutReplacement => index::sample(&mut rng, pool.len(), size)
            .into_iter()
            .map(|t| pool[t])
            .collect(),
        Resampling::WithReplacement => (0..size)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect(),
    };
    rows.sort_unstable();
    rows
}

pub fn bootstrap_models(
    trainer: &TrainerSpec,
    labeled: &LabeledDataset,
    folds: &FoldPartition,
    config: &BootstrapConfig,
) -> Result<BootstrapModels> {
    config.validate(folds)?;
    if folds.n_total() != labeled.len() {
        return Err(Error::DimensionMismatch(
            "fold partition and labeled data differ in size".into(),
        ));
    }
    let fitted: Vec<(Predictor, Vec<usize>, Vec<usize>)> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let sample = resample(folds, config, b);
            let mut seen = vec![false; labeled.len()];
            sample.iter().for_each(|&r| seen[r] = true);
            let mut complement: Vec<usize> =
                folds.retained().iter().copied().filter(|&r| !seen[r]).collect();
            complement.sort_unstable();
            let seed = derive_seed(config.seed, STREAM_BOOT_MODELS + b as u64);
            let model = train(trainer, &labeled.select(&sample), seed)?;
            Ok((model, sample, complement))
        })
        .collect::<Result<_>>()?;
    let mut out = BootstrapModels {
        models: Vec::with_capacity(fitted.len()),
        samples: Vec::with_capacity(fitted.len()),
        complements: Vec::with_capacity(fitted.len()),
    };
    for (m, s, c) in fitted {
        out.models.push(m);
        out.samples.push(s);
        out.complements.push(c);
    }
    Ok(out)
}

/// Bootstrap quantities evaluated once: the averaged model on the unlabeled
/// rows and every (replicate, held-out row) prediction pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPredictions {
    pub fbar_unlabeled: Vec<f64>,
    pub pair_rows: Vec<usize>,
    pub pair_preds: Vec<f64>,
    pub pair_labels: Vec<f64>,
    pub pair_replicate: Vec<usize>,
}

impl BootstrapPredictions {
    pub fn new(
        boot: &BootstrapModels,
        labeled: &LabeledDataset,
        unlabeled: &UnlabeledDataset,
    ) -> Result<Self> {
        if let Some(b) = boot.complements.iter().position(Vec::is_empty) {
            return Err(Error::InvalidConfig(format!(
                "bootstrap replicate {b} left no held-out labeled rows"
            )));
        }
        let per_model: Vec<Vec<f64>> = boot
            .models
            .par_iter()
            .map(|m| m.predict(unlabeled.features()))
            .collect();
        let n_big = unlabeled.len();
        let b_count = per_model.len() as f64;
        let fbar_unlabeled = (0..n_big)
            .map(|i| per_model.iter().map(|p| p[i]).sum::<f64>() / b_count)
            .collect();
        let mut out = Self {
            fbar_unlabeled,
            pair_rows: Vec::new(),
            pair_preds: Vec::new(),
            pair_labels: Vec::new(),
            pair_replicate: Vec::new(),
        };
        for (b, (model, comp)) in boot.models.iter().zip(&boot.complements).enumerate() {
            out.pair_preds
                .extend(model.predict_rows(labeled.features(), comp.iter().copied()));
            out.pair_labels.extend(comp.iter().map(|&r| labeled.labels()[r]));
            out.pair_rows.extend_from_slice(comp);
            out.pair_replicate.extend(std::iter::repeat_n(b, comp.len()));
        }
        Ok(out)
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_rows.len()
    }
}

/// `(σ̂², σ̂_Δ²)`: the variance of the averaged model's imputations and of
/// the pooled held-out residuals.
pub fn estimate_variance_mean(boot: &BootstrapPredictions) -> Result<(f64, f64)> {
    if boot.n_pairs() < 2 || boot.fbar_unlabeled.len() < 2 {
        return Err(Error::InvalidConfig(
            "variance estimation needs at least two imputations and two held-out pairs".into(),
        ));
    }
    let resid: Vec<f64> = boot
        .pair_preds
        .iter()
        .zip(&boot.pair_labels)
        .map(|(f, y)| f - y)
        .collect();
    Ok((sample_variance(&boot.fbar_unlabeled), sample_variance(&resid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::make_folds;
    use approx::assert_relative_eq;

    fn data(n: usize) -> (LabeledDataset, UnlabeledDataset) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 * 0.77).sin()]).collect();
        let y: Vec<f64> = rows.iter().enumerate().map(|(i, r)| r[0] + (i % 3) as f64).collect();
        let u: Vec<Vec<f64>> = (0..25).map(|i| vec![(i as f64 * 0.31).cos()]).collect();
        (
            LabeledDataset::from_rows(&rows, &y).unwrap(),
            UnlabeledDataset::from_rows(&u).unwrap(),
        )
    }

    #[test]
    fn default_resample_matches_training_fold_size() {
        let (lab, _) = data(103);
        let folds = make_folds(103, 10, 1).unwrap();
        let boot = bootstrap_models(&TrainerSpec::ridge(1.0), &lab, &folds, &BootstrapConfig::new(1, 4)).unwrap();
        assert_eq!(boot.samples[0].len(), 90);
        assert_eq!(boot.complements[0].len(), 10);
        let mut all: Vec<usize> = boot.samples[0].iter().chain(&boot.complements[0]).copied().collect();
        all.sort_unstable();
        let mut retained = folds.retained().to_vec();
        retained.sort_unstable();
        assert_eq!(all, retained);
    }

    #[test]
    fn resamples_are_deterministic() {
        let (lab, _) = data(60);
        let folds = make_folds(60, 5, 2).unwrap();
        for resampling in [Resampling::WithoutReplacement, Resampling::WithReplacement] {
            let cfg = BootstrapConfig {
                resampling,
                ..BootstrapConfig::new(6, 9)
            };
            let a = bootstrap_models(&TrainerSpec::knn(3), &lab, &folds, &cfg).unwrap();
            let b = bootstrap_models(&TrainerSpec::knn(3), &lab, &folds, &cfg).unwrap();
            assert_eq!(a.samples, b.samples);
            assert_eq!(a.complements, b.complements);
            assert_ne!(a.samples[0], a.samples[1]);
        }
    }

    #[test]
    fn with_replacement_complement_is_undrawn_rows() {
        let (lab, _) = data(40);
        let folds = make_folds(40, 4, 3).unwrap();
        let cfg = BootstrapConfig {
            resampling: Resampling::WithReplacement,
            resample_size: Some(40),
            ..BootstrapConfig::new(3, 1)
        };
        let boot = bootstrap_models(&TrainerSpec::ridge(0.5), &lab, &folds, &cfg).unwrap();
        for (s, c) in boot.samples.iter().zip(&boot.complements) {
            assert_eq!(s.len(), 40);
            assert!(c.iter().all(|r| !s.contains(r)));
            assert!(folds.retained().iter().all(|r| s.contains(r) || c.contains(r)));
        }
    }

    #[test]
    fn constant_labels_give_zero_variances() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let lab = LabeledDataset::from_rows(&rows, &[2.5; 30]).unwrap();
        let unl = UnlabeledDataset::from_rows(&rows[..7]).unwrap();
        let folds = make_folds(30, 3, 0).unwrap();
        let boot = bootstrap_models(&TrainerSpec::ridge(1.0), &lab, &folds, &BootstrapConfig::new(4, 0)).unwrap();
        let preds = BootstrapPredictions::new(&boot, &lab, &unl).unwrap();
        let (s2, s2d) = estimate_variance_mean(&preds).unwrap();
        assert!(s2.abs() < 1e-20 && s2d.abs() < 1e-20, "{s2} {s2d}");
    }

    #[test]
    fn pooled_residual_example() {
        // models ≡ 0, Y = [−1, 1], both rows held out by both replicates
        let rows = vec![vec![0.0], vec![1.0]];
        let lab = LabeledDataset::from_rows(&rows, &[-1.0, 1.0]).unwrap();
        let unl = UnlabeledDataset::from_rows(&rows).unwrap();
        let boot = BootstrapModels {
            models: vec![Predictor::constant(0.0); 2],
            samples: vec![vec![], vec![]],
            complements: vec![vec![0, 1], vec![0, 1]],
        };
        let preds = BootstrapPredictions::new(&boot, &lab, &unl).unwrap();
        let (s2, s2d) = estimate_variance_mean(&preds).unwrap();
        assert_eq!(s2, 0.0);
        assert_relative_eq!(s2d, 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn pooled_variance_matches_enumeration() {
        let (lab, unl) = data(80);
        let folds = make_folds(80, 8, 5).unwrap();
        let boot = bootstrap_models(
            &TrainerSpec::boosted_stumps(15, 0.3, 2),
            &lab,
            &folds,
            &BootstrapConfig::new(7, 5),
        )
        .unwrap();
        let preds = BootstrapPredictions::new(&boot, &lab, &unl).unwrap();
        let (_, pooled) = estimate_variance_mean(&preds).unwrap();
        // independent re-enumeration of every (b, i) pair
        let mut resid = Vec::new();
        for (model, comp) in boot.models.iter().zip(&boot.complements) {
            for &i in comp {
                let row: Vec<f64> = lab.features().row(i).iter().copied().collect();
                resid.push(model.predict_row(&row) - lab.labels()[i]);
            }
        }
        let m = resid.len() as f64;
        let mu = resid.iter().sum::<f64>() / m;
        let brute = resid.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((pooled - brute).abs() <= 1e-12 * brute.max(1.0));
    }

    #[test]
    fn empty_complement_is_rejected() {
        let (lab, unl) = data(20);
        let boot = BootstrapModels {
            models: vec![Predictor::constant(0.0)],
            samples: vec![(0..20).collect()],
            complements: vec![vec![]],
        };
        assert!(BootstrapPredictions::new(&boot, &lab, &unl).is_err());
    }
}
