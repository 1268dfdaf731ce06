//! Loss values, gradients and plug-in Hessians for the supported estimands.
//!
//! Conventions:
//! - mean: `½(θ − y)²`, gradient `θ − y`, Hessian `1`;
//! - quantile: pinball loss, subgradient `−q + 1{y ≤ θ}`;
//! - linear regression: `½(y − x_Sᵀθ)²`;
//! - GLM: `−y·x_Sᵀθ + ψ(x_Sᵀθ)` with `ψ(s) = ½s²` (gaussian) or
//!   `ψ(s) = log(1 + eˢ)` (logistic).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimand::{EstimandSpec, GlmFamily};

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub gradient: DVector<f64>,
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˢ)` without overflow.
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

impl GlmFamily {
    pub fn psi(self, s: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 0.5 * s * s,
            GlmFamily::Logistic => softplus(s),
        }
    }

    /// Mean function `ψ'(s)`.
    pub fn mean(self, s: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => s,
            GlmFamily::Logistic => sigmoid(s),
        }
    }

    /// Variance function `ψ''(s)`.
    pub fn variance(self, s: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 1.0,
            GlmFamily::Logistic => {
                let p = sigmoid(s);
                p * (1.0 - p)
            }
        }
    }
}

fn check_dim(spec: &EstimandSpec, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, estimand {spec} needs {}",
            theta.len(),
            spec.dim()
        )));
    }
    Ok(())
}

fn check_row(spec: &EstimandSpec, x: &[f64]) -> Result<()> {
    if let Some(cols) = spec.regressors() {
        if let Some(&c) = cols.iter().find(|&&c| c >= x.len()) {
            return Err(Error::DimensionMismatch(format!(
                "feature row has {} entries, regressor column {c} requested",
                x.len()
            )));
        }
    }
    Ok(())
}

fn family_of(spec: &EstimandSpec) -> Option<GlmFamily> {
    match spec {
        EstimandSpec::LinearRegression { .. } => Some(GlmFamily::Gaussian),
        EstimandSpec::Glm { family, .. } => Some(*family),
        _ => None,
    }
}

/// Loss value and (sub)gradient at one observation.
pub fn loss_eval(spec: &EstimandSpec, theta: &DVector<f64>, x: &[f64], y: f64) -> Result<LossEval> {
    check_dim(spec, theta)?;
    check_row(spec, x)?;
    let eval = match spec {
        EstimandSpec::Mean => {
            let r = theta[0] - y;
            LossEval {
                value: 0.5 * r * r,
                gradient: DVector::from_element(1, r),
            }
        }
        EstimandSpec::Quantile { q } => {
            let t = theta[0];
            let value = if y > t { q * (y - t) } else { (1.0 - q) * (t - y) };
            LossEval {
                value,
                gradient: DVector::from_element(1, quantile_gradient(*q, t, y)),
            }
        }
        EstimandSpec::LinearRegression { .. } => {
            let xs = spec.select(x);
            let r = xs.dot(theta) - y;
            LossEval {
                value: 0.5 * r * r,
                gradient: xs * r,
            }
        }
        EstimandSpec::Glm { family, .. } => {
            let xs = spec.select(x);
            let s = xs.dot(theta);
            LossEval {
                value: -y * s + family.psi(s),
                gradient: xs * (family.mean(s) - y),
            }
        }
    };
    Ok(eval)
}

pub fn loss_gradient(
    spec: &EstimandSpec,
    theta: &DVector<f64>,
    x: &[f64],
    y: f64,
) -> Result<DVector<f64>> {
    Ok(loss_eval(spec, theta, x, y)?.gradient)
}

#[inline]
pub(crate) fn quantile_gradient(q: f64, theta: f64, y: f64) -> f64 {
    -q + if y <= theta { 1.0 } else { 0.0 }
}

/// Gradient evaluator for a fixed `(spec, θ)`, with the linear predictor
/// precomputed per row so that the same row can be scored against many
/// labels cheaply.
pub(crate) struct GradientKernel<'a> {
    spec: &'a EstimandSpec,
    theta: DVector<f64>,
}

impl<'a> GradientKernel<'a> {
    pub fn new(spec: &'a EstimandSpec, theta: &DVector<f64>) -> Result<Self> {
        check_dim(spec, theta)?;
        Ok(Self {
            spec,
            theta: theta.clone(),
        })
    }

    /// `(x_S, ψ'(x_Sᵀθ))` for a regression row; `(∅, θ)` for mean/quantile.
    pub fn row_state(&self, x: &[f64]) -> (DVector<f64>, f64) {
        match family_of(self.spec) {
            Some(family) => {
                let xs = self.spec.select(x);
                let m = family.mean(xs.dot(&self.theta));
                (xs, m)
            }
            None => (DVector::zeros(0), self.theta[0]),
        }
    }

    /// Gradient at label `y` given a row state.
    pub fn gradient(&self, state: &(DVector<f64>, f64), y: f64) -> DVector<f64> {
        let (xs, m) = state;
        match self.spec {
            EstimandSpec::Mean => DVector::from_element(1, m - y),
            EstimandSpec::Quantile { q } => {
                DVector::from_element(1, quantile_gradient(*q, *m, y))
            }
            _ => xs * (m - y),
        }
    }
}

/// Plug-in Hessian `(1/m) Σ ∇²ℓ_θ` over the rows of `features`.
///
/// Singular results are returned as-is; callers that invert decide how to
/// fail.
pub fn hessian_plugin(
    spec: &EstimandSpec,
    theta: &DVector<f64>,
    features: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_dim(spec, theta)?;
    if features.nrows() == 0 {
        return Err(Error::InvalidConfig(
            "Hessian needs at least one feature row".into(),
        ));
    }
    match spec {
        EstimandSpec::Mean => Ok(DMatrix::identity(1, 1)),
        EstimandSpec::Quantile { .. } => Err(Error::Unsupported(
            "the pinball loss has no plug-in Hessian; use the gradient-test set".into(),
        )),
        EstimandSpec::LinearRegression { regressors, .. }
        | EstimandSpec::Glm { regressors, .. } => {
            if let Some(&c) = regressors.iter().find(|&&c| c >= features.ncols()) {
                return Err(Error::DimensionMismatch(format!(
                    "regressor column {c} outside {} feature columns",
                    features.ncols()
                )));
            }
            let family = family_of(spec).expect("regression family");
            let xs = features.select_columns(regressors);
            let m = xs.nrows();
            let mut weighted = xs.clone();
            for i in 0..m {
                let w = family.variance(xs.row(i).dot(&theta.transpose()));
                weighted.row_mut(i).scale_mut(w);
            }
            let mut h = xs.transpose() * weighted / m as f64;
            crate::linalg::symmetrize(&mut h);
            Ok(h)
        }
    }
}
