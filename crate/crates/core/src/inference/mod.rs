//! Variance estimation and interval construction.
//!
//! Every method's asymptotic covariance has the sandwich shape
//! `H⁻¹ (r Σ_θ + Σ_Δ) H⁻¹ / n_eff`, where `Σ_θ` is the covariance of the
//! imputed gradients, `Σ_Δ` that of the debiasing differences and
//! `r = n_eff / N`. The methods differ only in which predictions feed the two
//! covariances and in `n_eff`.

mod bootstrap;
mod quantile;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::estimators::ImputedObjective;
use crate::linalg::{invert_symmetric, sandwich, CovAccumulator};
use crate::losses::{hessian_plugin, GradientKernel};

pub use bootstrap::{
    bootstrap_models, estimate_variance_mean, BootstrapConfig, BootstrapModels,
    BootstrapPredictions, Resampling,
};
pub use quantile::{confset_quantile, order_statistic_interval, QuantileSet};
pub(crate) use quantile::{gradient_test_set, ImputedIndicators, QuantileSetInputs};

/// `z_{1 − α/(2d)}`.
pub fn z_critical(alpha: f64, d: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if d == 0 {
        return Err(Error::InvalidConfig("Bonferroni count must be positive".into()));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / (2.0 * d as f64)))
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub sigma_theta: DMatrix<f64>,
    pub sigma_delta: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    /// `n_eff / N`.
    pub ratio: f64,
    pub sigma: DMatrix<f64>,
    pub n_eff: usize,
}

impl VarianceReport {
    /// `σ̂²` in the mean case.
    pub fn sigma2(&self) -> f64 {
        self.sigma_theta[(0, 0)]
    }

    /// `σ̂_Δ²` in the mean case.
    pub fn sigma2_delta(&self) -> f64 {
        self.sigma_delta[(0, 0)]
    }
}

fn row(features: &DMatrix<f64>, i: usize) -> Vec<f64> {
    features.row(i).iter().copied().collect()
}

/// Sandwich variance from a single-prediction-set objective evaluated at
/// `theta`. Covariances with fewer than two contributions are zero.
pub(crate) fn sandwich_variance(
    spec: &EstimandSpec,
    theta: &DVector<f64>,
    obj: &ImputedObjective<'_>,
    n_eff: usize,
) -> Result<VarianceReport> {
    if obj.imputed_preds.len() != 1 {
        return Err(Error::InvalidConfig(
            "variance assembly expects one imputation per row".into(),
        ));
    }
    let kernel = GradientKernel::new(spec, theta)?;
    let d = spec.dim();
    let preds = obj.imputed_preds[0];
    let mut imputed = CovAccumulator::new(d);
    for (i, &p) in preds.iter().enumerate() {
        let state = kernel.row_state(&row(obj.imputed_features, i));
        imputed.push(&kernel.gradient(&state, p));
    }
    let mut debias = CovAccumulator::new(d);
    for (t, &r) in obj.debias_rows.iter().enumerate() {
        let state = kernel.row_state(&row(obj.debias_features, r));
        debias.push(&(kernel.gradient(&state, obj.debias_preds[t])
            - kernel.gradient(&state, obj.debias_labels[t])));
    }
    let cov_or_zero = |acc: &CovAccumulator| {
        if acc.count() < 2 {
            Ok(DMatrix::zeros(d, d))
        } else {
            acc.covariance()
        }
    };
    let sigma_theta = cov_or_zero(&imputed)?;
    let sigma_delta = cov_or_zero(&debias)?;
    let hessian = hessian_plugin(spec, theta, obj.imputed_features)?;
    let ratio = n_eff as f64 / preds.len() as f64;
    let h_inv = invert_symmetric(&hessian)?;
    let sigma = sandwich(&h_inv, &(&sigma_theta * ratio + &sigma_delta));
    Ok(VarianceReport {
        sigma_theta,
        sigma_delta,
        hessian,
        ratio,
        sigma,
        n_eff,
    })
}

/// Cross-prediction variance at `theta` from bootstrap artifacts: `Σ̂_θ` from
/// the averaged bootstrap model on the unlabeled rows, `Σ̂_Δ` pooled over
/// every (replicate, held-out row) pair, `Ĥ` on the unlabeled features.
pub fn estimate_variance_general(
    spec: &EstimandSpec,
    theta: &DVector<f64>,
    boot: &BootstrapPredictions,
    labeled: &crate::data::LabeledDataset,
    unlabeled: &crate::data::UnlabeledDataset,
    n_prime: usize,
) -> Result<VarianceReport> {
    if let EstimandSpec::Quantile { .. } = spec {
        return Err(Error::Unsupported(
            "quantiles use the gradient-test set, not a sandwich".into(),
        ));
    }
    let obj = ImputedObjective {
        imputed_features: unlabeled.features(),
        imputed_preds: vec![&boot.fbar_unlabeled],
        debias_features: labeled.features(),
        debias_rows: &boot.pair_rows,
        debias_preds: &boot.pair_preds,
        debias_labels: &boot.pair_labels,
    };
    sandwich_variance(spec, theta, &obj, n_prime)
}

/// Coordinate-wise CLT interval `θ̂_i ± z_{1−α/(2d)} sqrt(Σ̂_ii / n_eff)`,
/// with `d = bonferroni`.
pub fn confint_clt(
    theta_hat: &DVector<f64>,
    report: &VarianceReport,
    alpha: f64,
    bonferroni: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let z = z_critical(alpha, bonferroni)?;
    if report.sigma.nrows() != theta_hat.len() {
        return Err(Error::DimensionMismatch(
            "variance report and estimate differ in dimension".into(),
        ));
    }
    let half = DVector::from_iterator(
        theta_hat.len(),
        (0..theta_hat.len()).map(|i| z * (report.sigma[(i, i)].max(0.0) / report.n_eff as f64).sqrt()),
    );
    Ok((theta_hat - &half, theta_hat + &half))
}

/// The mean interval written out directly:
/// `θ̂ ± z_{1−α/2} sqrt((n'/N) σ̂² + σ̂_Δ²) / sqrt(n')`.
pub fn confint_mean(
    theta_hat: f64,
    sigma2: f64,
    sigma2_delta: f64,
    n_prime: usize,
    n_unlabeled: usize,
    alpha: f64,
) -> Result<(f64, f64)> {
    let z = z_critical(alpha, 1)?;
    let n = n_prime as f64;
    let half = z * ((n / n_unlabeled as f64) * sigma2 + sigma2_delta).sqrt() / n.sqrt();
    Ok((theta_hat - half, theta_hat + half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledDataset, UnlabeledDataset};
    use crate::estimators::{build_bundle, estimate_cross_general};
    use crate::folds::make_folds;
    use crate::rng::rng_for;
    use crate::trainers::{train_fold_models, TrainerSpec};
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn z_matches_reference_quantile() {
        assert!((z_critical(0.1, 1).unwrap() - 1.6448536269514722).abs() < 1e-9);
        assert!((z_critical(0.05, 1).unwrap() - 1.959963984540054).abs() < 1e-9);
        // Bonferroni with d=2 at α=0.1 is the 0.975 quantile
        assert!((z_critical(0.1, 2).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!(z_critical(1.0, 1).is_err() && z_critical(0.0, 1).is_err());
    }

    #[test]
    fn mean_interval_examples() {
        let (lo, hi) = confint_mean(4.0, 0.0, 1.0, 100, usize::MAX, 0.1).unwrap();
        assert!((lo - 3.8355).abs() < 5e-5 && (hi - 4.1645).abs() < 5e-5, "{lo} {hi}");
        let (lo, hi) = confint_mean(4.0, 0.0, 0.0, 100, 1000, 0.1).unwrap();
        assert_eq!((lo, hi), (4.0, 4.0));
        // doubling N halves the first variance contribution
        let half_sq = |big_n: usize| {
            let (lo, hi) = confint_mean(0.0, 3.0, 0.0, 100, big_n, 0.1).unwrap();
            ((hi - lo) / 2.0).powi(2)
        };
        assert_relative_eq!(half_sq(2000) * 2.0, half_sq(1000), epsilon = 1e-14);
    }

    #[test]
    fn width_is_monotone_in_both_variances() {
        let width = |s2: f64, s2d: f64| {
            let (lo, hi) = confint_mean(1.0, s2, s2d, 200, 5000, 0.1).unwrap();
            hi - lo
        };
        let mut last = 0.0;
        for t in 0..20 {
            let w = width(t as f64 * 0.3, 1.0);
            assert!(w >= last);
            last = w;
        }
        last = 0.0;
        for t in 0..20 {
            let w = width(1.0, t as f64 * 0.3);
            assert!(w >= last);
            last = w;
        }
    }

    fn draw(seed: u64, n: usize, big_n: usize) -> (LabeledDataset, UnlabeledDataset) {
        let mut rng = rng_for(seed, 1);
        let mut gen = |m: usize| {
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    vec![1.0, a, b]
                })
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|r| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    2.0 + r[1] + 0.5 * r[2] + e
                })
                .collect();
            (rows, y)
        };
        let (r, y) = gen(n);
        let (u, _) = gen(big_n);
        (
            LabeledDataset::from_rows(&r, &y).unwrap(),
            UnlabeledDataset::from_rows(&u).unwrap(),
        )
    }

    fn boot_for(
        lab: &LabeledDataset,
        unl: &UnlabeledDataset,
        trainer: &TrainerSpec,
        seed: u64,
    ) -> (crate::FoldPartition, BootstrapPredictions) {
        let folds = make_folds(lab.len(), 5, seed).unwrap();
        let boot = bootstrap_models(trainer, lab, &folds, &BootstrapConfig::new(8, seed)).unwrap();
        let preds = BootstrapPredictions::new(&boot, lab, unl).unwrap();
        (folds, preds)
    }

    #[test]
    fn general_mean_path_reduces_to_scalar_formula() {
        let (lab, unl) = draw(3, 100, 400);
        let (folds, boot) = boot_for(&lab, &unl, &TrainerSpec::ridge(1.0), 3);
        let theta = DVector::from_element(1, 2.3);
        let rep =
            estimate_variance_general(&EstimandSpec::Mean, &theta, &boot, &lab, &unl, folds.n_retained())
                .unwrap();
        let (s2, s2d) = estimate_variance_mean(&boot).unwrap();
        assert_relative_eq!(rep.sigma2(), s2, epsilon = 1e-10);
        assert_relative_eq!(rep.sigma2_delta(), s2d, epsilon = 1e-10);
        assert_eq!(rep.hessian, DMatrix::identity(1, 1));
        let (lo, hi) = confint_clt(&theta, &rep, 0.1, 1).unwrap();
        let (lo2, hi2) = confint_mean(2.3, s2, s2d, folds.n_retained(), unl.len(), 0.1).unwrap();
        assert!((lo[0] - lo2).abs() <= 1e-10 && (hi[0] - hi2).abs() <= 1e-10);
    }

    #[test]
    fn perfect_residuals_give_zero_debias_covariance() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, (i as f64 * 0.4).sin()]).collect();
        let lab = LabeledDataset::from_rows(&rows, &[0.0; 40]).unwrap();
        let unl = UnlabeledDataset::from_rows(&rows).unwrap();
        let (folds, boot) = boot_for(&lab, &unl, &TrainerSpec::label_mean(), 0);
        let spec = EstimandSpec::linear_regression(vec![0, 1], 1).unwrap();
        let rep = estimate_variance_general(
            &spec,
            &DVector::from_vec(vec![0.3, -0.2]),
            &boot,
            &lab,
            &unl,
            folds.n_retained(),
        )
        .unwrap();
        assert_eq!(rep.sigma_delta, DMatrix::zeros(2, 2));
    }

    #[test]
    fn sandwich_is_symmetric_psd_and_order_invariant() {
        for seed in 0..50 {
            let (lab, unl) = draw(100 + seed, 60, 120);
            let folds = make_folds(60, 5, seed).unwrap();
            let models = train_fold_models(&TrainerSpec::ridge(0.5), &lab, &folds, seed).unwrap();
            let bundle = build_bundle(models, &lab, &unl, &folds).unwrap();
            let spec = EstimandSpec::linear_regression(vec![0, 1, 2], 1).unwrap();
            let theta = estimate_cross_general(&spec, &bundle, &lab, &unl).unwrap().theta;
            let boot = bootstrap_models(&TrainerSpec::ridge(0.5), &lab, &folds, &BootstrapConfig::new(5, seed))
                .unwrap();
            let preds = BootstrapPredictions::new(&boot, &lab, &unl).unwrap();
            let rep = estimate_variance_general(&spec, &theta, &preds, &lab, &unl, 60).unwrap();
            assert_relative_eq!(rep.sigma, rep.sigma.transpose(), epsilon = 0.0);
            let eig = rep.sigma.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() >= -1e-12 * eig.amax());

            // reversing replicate order leaves every block unchanged
            let reversed = BootstrapModels {
                models: boot.models.iter().rev().cloned().collect(),
                samples: boot.samples.iter().rev().cloned().collect(),
                complements: boot.complements.iter().rev().cloned().collect(),
            };
            let rpreds = BootstrapPredictions::new(&reversed, &lab, &unl).unwrap();
            let rrep = estimate_variance_general(&spec, &theta, &rpreds, &lab, &unl, 60).unwrap();
            assert_relative_eq!(rep.sigma, rrep.sigma, max_relative = 1e-10);
        }
    }

    #[test]
    fn singular_hessian_names_eigenvalue() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let lab = LabeledDataset::from_rows(&rows, &[1.0; 20]).unwrap();
        let unl = UnlabeledDataset::from_rows(&rows).unwrap();
        let (_, boot) = boot_for(&lab, &unl, &TrainerSpec::label_mean(), 1);
        let spec = EstimandSpec::linear_regression(vec![0, 1], 0).unwrap();
        let err = estimate_variance_general(&spec, &DVector::zeros(2), &boot, &lab, &unl, 20).unwrap_err();
        assert!(matches!(err, Error::SingularHessian { .. }));
    }
}
