use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::estimand::{EstimandSpec, GlmFamily};
use crate::rng::{rng_for, STREAM_DATA};

/// Synthetic Gaussian designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dgp {
    /// `X ~ N(0, I₂)`, `Y = μ + Xᵀβ + ξ` with `β₁ = β₂ = Rσ_Y/√2` and
    /// `ξ ~ N(0, σ_Y²(1 − R²))`, so `Y ~ N(μ, σ_Y²)` for every `R²`.
    MeanQuantile { mu: f64, sigma2_y: f64, r2: f64 },
    /// `X ~ N(0, I₃)`, `Y = Xᵀβ + ξ` with `β = (1, 1, R₀σ_Y)` and
    /// `ξ ~ N(0, σ_Y²(1 − R₀²))`.
    Linear { r0: f64, sigma2_y: f64 },
}

impl Dgp {
    pub fn validate(&self) -> Result<()> {
        let (share, sigma2) = match *self {
            Dgp::MeanQuantile { r2, sigma2_y, mu } => {
                if !mu.is_finite() {
                    return Err(Error::InvalidConfig("mu must be finite".into()));
                }
                (r2, sigma2_y)
            }
            Dgp::Linear { r0, sigma2_y } => (r0 * r0, sigma2_y),
        };
        if !(0.0..=1.0).contains(&share) {
            return Err(Error::InvalidConfig(format!(
                "explained-variance share must lie in [0, 1], got {share}"
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma2_y must be positive, got {sigma2}"
            )));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        match self {
            Dgp::MeanQuantile { .. } => 2,
            Dgp::Linear { .. } => 3,
        }
    }

    /// `(intercept, β, noise sd)`.
    fn coefficients(&self) -> (f64, Vec<f64>, f64) {
        match *self {
            Dgp::MeanQuantile { mu, sigma2_y, r2 } => {
                let b = (r2 * sigma2_y).sqrt() / std::f64::consts::SQRT_2;
                (mu, vec![b, b], (sigma2_y * (1.0 - r2)).sqrt())
            }
            Dgp::Linear { r0, sigma2_y } => {
                let s = sigma2_y.sqrt();
                (0.0, vec![1.0, 1.0, r0 * s], (sigma2_y * (1.0 - r0 * r0)).sqrt())
            }
        }
    }

    /// Draws `n` labeled rows then `big_n` unlabeled rows from one stream.
    pub fn sample(&self, n: usize, big_n: usize, seed: u64) -> (LabeledDataset, UnlabeledDataset) {
        let (intercept, beta, noise) = self.coefficients();
        let p = beta.len();
        let mut rng = rng_for(seed, STREAM_DATA);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xi: f64 = StandardNormal.sample(&mut rng);
            labels.push(intercept + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + noise * xi);
            rows.push(x);
        }
        let unlabeled: Vec<Vec<f64>> = (0..big_n)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        (
            LabeledDataset::from_rows(&rows, &labels).expect("finite Gaussian draws"),
            UnlabeledDataset::from_rows(&unlabeled).expect("finite Gaussian draws"),
        )
    }

    /// Population value of the reported coordinate of `spec`.
    pub fn truth(&self, spec: &EstimandSpec) -> Result<f64> {
        let (intercept, beta, noise) = self.coefficients();
        let sd_y = (beta.iter().map(|b| b * b).sum::<f64>() + noise * noise).sqrt();
        match spec {
            EstimandSpec::Mean => Ok(intercept),
            EstimandSpec::Quantile { q } => {
                Ok(intercept + sd_y * Normal::standard().inverse_cdf(*q))
            }
            // features are centred and independent, so the no-intercept
            // population regression recovers β on the selected columns
            EstimandSpec::LinearRegression { regressors, report }
            | EstimandSpec::Glm {
                family: GlmFamily::Gaussian,
                regressors,
                report,
            } => regressors
                .get(*report)
                .and_then(|&c| beta.get(c))
                .copied()
                .ok_or_else(|| Error::InvalidConfig("report coordinate out of range".into())),
            EstimandSpec::Glm { .. } => Err(Error::Unsupported(
                "no analytic target for logistic regression on these designs".into(),
            )),
        }
    }
}

pub fn sample_mean_quantile_dgp(
    mu: f64,
    sigma2_y: f64,
    r2: f64,
    n: usize,
    big_n: usize,
    seed: u64,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    let dgp = Dgp::MeanQuantile { mu, sigma2_y, r2 };
    dgp.validate()?;
    Ok(dgp.sample(n, big_n, seed))
}

pub fn sample_linear_dgp(
    r0: f64,
    sigma2_y: f64,
    n: usize,
    big_n: usize,
    seed: u64,
) -> Result<(LabeledDataset, UnlabeledDataset)> {
    let dgp = Dgp::Linear { r0, sigma2_y };
    dgp.validate()?;
    Ok(dgp.sample(n, big_n, seed))
}
