//! The imputed-and-debiased objective shared by every estimator:
//!
//! ```text
//! L(θ) = 1/(S·N) Σ_s Σ_i ℓ_θ(X̃_i, f_s(X̃_i))  −  1/m Σ_t [ℓ_θ(X_t, f(X_t)) − ℓ_θ(X_t, Y_t)]
//! ```
//!
//! `S` prediction sets on `N` imputed rows and `m` debiasing pairs. The
//! cross-prediction objective has `S = K` and `m = n'`; the split-based one
//! `S = 1`; the no-debias heuristic has no pairs; the classical objective
//! "imputes" the labels themselves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::linalg::solve_spd;
use crate::losses::{hessian_plugin, GradientKernel};

pub(crate) const NEWTON_MAX_ITER: usize = 100;
pub(crate) const NEWTON_TOL: f64 = 1e-10;
/// Below this gradient norm a failed line search is treated as having
/// reached the floating-point floor rather than as divergence.
const NEWTON_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub(crate) struct ImputedObjective<'a> {
    /// Features of the imputed rows (unlabeled data, or labeled data for the
    /// classical objective).
    pub imputed_features: &'a DMatrix<f64>,
    /// `S` prediction vectors, each of length `N`.
    pub imputed_preds: Vec<&'a [f64]>,
    /// Features of the debiasing rows.
    pub debias_features: &'a DMatrix<f64>,
    /// Row indices into `debias_features`.
    pub debias_rows: &'a [usize],
    pub debias_preds: &'a [f64],
    pub debias_labels: &'a [f64],
}

/// Result of minimizing an imputed objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub theta: DVector<f64>,
    pub warnings: Vec<String>,
}

impl PointEstimate {
    pub(crate) fn plain(theta: DVector<f64>) -> Self {
        Self {
            theta,
            warnings: Vec::new(),
        }
    }
}

fn row(features: &DMatrix<f64>, i: usize) -> Vec<f64> {
    features.row(i).iter().copied().collect()
}

impl<'a> ImputedObjective<'a> {
    pub fn n_imputed(&self) -> usize {
        self.imputed_preds.first().map_or(0, |p| p.len())
    }

    pub fn n_sets(&self) -> usize {
        self.imputed_preds.len()
    }

    pub fn n_debias(&self) -> usize {
        self.debias_rows.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.n_imputed();
        if n == 0 || self.imputed_preds.is_empty() {
            return Err(Error::InvalidConfig("imputed objective has no rows".into()));
        }
        if self.imputed_features.nrows() != n || self.imputed_preds.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(
                "imputed prediction vector length differs from row count".into(),
            ));
        }
        let m = self.debias_rows.len();
        if self.debias_preds.len() != m || self.debias_labels.len() != m {
            return Err(Error::DimensionMismatch(
                "debiasing predictions, labels and rows differ in length".into(),
            ));
        }
        Ok(())
    }

    /// Per-row average over prediction sets.
    pub fn averaged_preds(&self) -> Vec<f64> {
        let s = self.n_sets() as f64;
        (0..self.n_imputed())
            .map(|i| self.imputed_preds.iter().map(|p| p[i]).sum::<f64>() / s)
            .collect()
    }

    /// `∇L(θ)` assembled term by term from per-observation gradients.
    pub fn gradient(&self, spec: &EstimandSpec, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check()?;
        let kernel = GradientKernel::new(spec, theta)?;
        let d = spec.dim();
        let mut imputed = DVector::zeros(d);
        for i in 0..self.n_imputed() {
            let state = kernel.row_state(&row(self.imputed_features, i));
            for preds in &self.imputed_preds {
                imputed += kernel.gradient(&state, preds[i]);
            }
        }
        imputed /= (self.n_sets() * self.n_imputed()) as f64;
        let mut debias = DVector::zeros(d);
        for (t, &r) in self.debias_rows.iter().enumerate() {
            let state = kernel.row_state(&row(self.debias_features, r));
            debias += kernel.gradient(&state, self.debias_preds[t])
                - kernel.gradient(&state, self.debias_labels[t]);
        }
        if !self.debias_rows.is_empty() {
            debias /= self.n_debias() as f64;
        }
        Ok(imputed - debias)
    }

    pub fn solve(&self, spec: &EstimandSpec) -> Result<PointEstimate> {
        self.check()?;
        match spec {
            EstimandSpec::Mean => Ok(PointEstimate::plain(DVector::from_element(
                1,
                self.mean_closed_form(),
            ))),
            EstimandSpec::Quantile { q } => Ok(self.quantile_crossing(*q)),
            EstimandSpec::LinearRegression { .. } => {
                self.least_squares(spec).map(PointEstimate::plain)
            }
            EstimandSpec::Glm { .. } => self
                .newton(spec, DVector::zeros(spec.dim()))
                .map(PointEstimate::plain),
        }
    }

    pub fn mean_closed_form(&self) -> f64 {
        mean_closed_form(&self.imputed_preds, self.debias_preds, self.debias_labels)
    }

    /// Closed form for the squared loss:
    /// `(X̃ᵀX̃)⁻¹ (X̃ᵀ f_avg(X̃) − (N/m) Xᵀ(f(X) − Y))`.
    fn least_squares(&self, spec: &EstimandSpec) -> Result<DVector<f64>> {
        let cols = spec.regressors().expect("regression estimand");
        let xt = self.imputed_features.select_columns(cols);
        let favg = DVector::from_vec(self.averaged_preds());
        let gram = xt.transpose() * &xt;
        let mut rhs = xt.transpose() * favg;
        if !self.debias_rows.is_empty() {
            let scale = self.n_imputed() as f64 / self.n_debias() as f64;
            let mut correction = DVector::zeros(cols.len());
            for (t, &r) in self.debias_rows.iter().enumerate() {
                let xs = spec.select(&row(self.debias_features, r));
                correction += xs * (self.debias_preds[t] - self.debias_labels[t]);
            }
            rhs -= correction * scale;
        }
        solve_spd(&gram, &rhs, "imputed design Gram matrix").map_err(|_| {
            Error::SingularSystem("imputed design matrix is rank deficient".into())
        })
    }

    /// Damped Newton on `∇L(θ) = 0`. The debiasing term is affine in θ for
    /// GLMs, so the Hessian is the plug-in Hessian on the imputed rows.
    fn newton(&self, spec: &EstimandSpec, mut theta: DVector<f64>) -> Result<DVector<f64>> {
        let mut grad = self.gradient(spec, &theta)?;
        let mut norm = grad.amax();
        for iteration in 0..NEWTON_MAX_ITER {
            if norm <= NEWTON_TOL {
                return Ok(theta);
            }
            let hessian = hessian_plugin(spec, &theta, self.imputed_features)?;
            let step = solve_spd(&hessian, &grad, "GLM Hessian")
                .map_err(|_| Error::SingularSystem("GLM Hessian is singular".into()))?;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let candidate = &theta - &step * scale;
                let g = self.gradient(spec, &candidate)?;
                let n = g.amax();
                if n < norm {
                    theta = candidate;
                    grad = g;
                    norm = n;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                if norm <= NEWTON_FLOOR {
                    return Ok(theta);
                }
                return Err(Error::NoConvergence {
                    iterations: iteration + 1,
                    grad_norm: norm,
                });
            }
        }
        if norm <= NEWTON_TOL {
            Ok(theta)
        } else {
            Err(Error::NoConvergence {
                iterations: NEWTON_MAX_ITER,
                grad_norm: norm,
            })
        }
    }

    /// Sorted union of every prediction and label in the objective.
    pub fn quantile_grid(&self) -> Vec<f64> {
        let mut grid: Vec<f64> = self
            .imputed_preds
            .iter()
            .flat_map(|p| p.iter().copied())
            .chain(self.debias_preds.iter().copied())
            .chain(self.debias_labels.iter().copied())
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// Debiased CDF `F̃(θ) − Δ(θ)` evaluated on a sorted grid.
    pub fn debiased_cdf(&self, grid: &[f64]) -> DebiasedCdf {
        let mut imputed: Vec<f64> = self
            .imputed_preds
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect();
        imputed.sort_by(f64::total_cmp);
        let mut preds = self.debias_preds.to_vec();
        preds.sort_by(f64::total_cmp);
        let mut labels = self.debias_labels.to_vec();
        labels.sort_by(f64::total_cmp);
        let count = |v: &[f64], t: f64| v.partition_point(|&x| x <= t) as f64;
        let m = self.n_debias().max(1) as f64;
        let total = imputed.len() as f64;
        let (mut cdf, mut delta) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
        for &t in grid {
            cdf.push(count(&imputed, t) / total);
            delta.push((count(&preds, t) - count(&labels, t)) / m);
        }
        DebiasedCdf { cdf, delta }
    }

    /// Smallest grid point where the debiased CDF reaches `q`.
    fn quantile_crossing(&self, q: f64) -> PointEstimate {
        let grid = self.quantile_grid();
        let curve = self.debiased_cdf(&grid);
        match (0..grid.len()).find(|&g| curve.value(g) >= q) {
            Some(g) => PointEstimate::plain(DVector::from_element(1, grid[g])),
            None => PointEstimate {
                theta: DVector::from_element(1, *grid.last().expect("nonempty grid")),
                warnings: vec![format!(
                    "debiased CDF never reaches {q}; returning the largest grid point"
                )],
            },
        }
    }
}

/// `F̃(θ)` and `Δ(θ)` on a grid.
#[derive(Debug, Clone)]
pub struct DebiasedCdf {
    pub cdf: Vec<f64>,
    pub delta: Vec<f64>,
}

impl DebiasedCdf {
    pub fn value(&self, g: usize) -> f64 {
        self.cdf[g] - self.delta[g]
    }
}

/// Fits the classical M-estimator on labeled data alone.
pub(crate) fn classical_objective<'a>(
    features: &'a DMatrix<f64>,
    labels: &'a [f64],
) -> ImputedObjective<'a> {
    ImputedObjective {
        imputed_features: features,
        imputed_preds: vec![labels],
        debias_features: features,
        debias_rows: &[],
        debias_preds: &[],
        debias_labels: &[],
    }
}

/// `1/(S·N) ΣΣ f_s(X̃_i) − 1/m Σ (f(X_t) − Y_t)`; the second term is absent
/// when there are no pairs.
pub(crate) fn mean_closed_form(imputed: &[&[f64]], preds: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = imputed.iter().map(|p| p.iter().sum::<f64>()).sum();
    let count: usize = imputed.iter().map(|p| p.len()).sum();
    let first = total / count as f64;
    if preds.is_empty() {
        return first;
    }
    let bias = preds.iter().zip(labels).map(|(f, y)| f - y).sum::<f64>() / preds.len() as f64;
    first - bias
}
