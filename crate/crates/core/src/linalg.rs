//! Small dense helpers: sample moments and symmetric solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; `NaN` for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.len();
    if m < 2 {
        return f64::NAN;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (m - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Streaming accumulator for the unbiased covariance of `d`-vectors.
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    count: usize,
    sum: DVector<f64>,
    sum_outer: DMatrix<f64>,
    shift: Option<DVector<f64>>,
}

impl CovAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(d),
            sum_outer: DMatrix::zeros(d, d),
            shift: None,
        }
    }

    pub fn push(&mut self, v: &DVector<f64>) {
        // Shift by the first observation to keep the raw-moment formula
        // well conditioned.
        let shift = self.shift.get_or_insert_with(|| v.clone());
        let c = v - &*shift;
        self.sum += &c;
        self.sum_outer.ger(1.0, &c, &c, 1.0);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.count < 2 {
            return Err(Error::InvalidConfig(format!(
                "covariance needs at least two observations, got {}",
                self.count
            )));
        }
        let m = self.count as f64;
        let mut cov = (&self.sum_outer - (&self.sum * self.sum.transpose()) / m) / (m - 1.0);
        symmetrize(&mut cov);
        Ok(cov)
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Inverse of a symmetric matrix, failing with the smallest eigenvalue when
/// it is numerically singular.
pub fn invert_symmetric(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = h.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.amax();
    let min_eig = eig.eigenvalues.min();
    if !min_eig.is_finite() || min_eig.abs() <= 1e-12 * max_abs.max(1e-300) {
        return Err(Error::SingularHessian {
            min_eigenvalue: min_eig,
        });
    }
    match h.clone().cholesky() {
        Some(ch) => {
            let mut inv = ch.inverse();
            symmetrize(&mut inv);
            Ok(inv)
        }
        None => h.clone().try_inverse().ok_or(Error::SingularHessian {
            min_eigenvalue: min_eig,
        }),
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    Err(Error::SingularSystem(format!("{what} is not positive definite")))
}

/// `H⁻¹ V H⁻¹`, symmetrized.
pub fn sandwich(h_inv: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = h_inv * v * h_inv;
    symmetrize(&mut s);
    s
}
