use nalgebra::{DMatrix, DVector};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    coef: Vec<f64>,
    intercept: f64,
}

impl LinearModel {
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub(super) fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Solves `(AᵀA + λD)β = Aᵀy` where `A = [X 1]` and `D` penalizes every
/// column except the intercept.
pub(super) fn fit(data: &LabeledDataset, lambda: f64) -> Result<LinearModel> {
    let x = data.features();
    let (n, p) = x.shape();
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[(i, j)] } else { 1.0 });
    let mut gram = a.transpose() * &a;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs: DVector<f64> = a.transpose() * data.labels();
    let beta = crate::linalg::solve_spd(&gram, &rhs, "ridge normal matrix").map_err(|_| {
        Error::SingularSystem(format!(
            "ridge design with lambda={lambda} is singular ({n} rows, {p} features)"
        ))
    })?;
    Ok(LinearModel {
        coef: beta.as_slice()[..p].to_vec(),
        intercept: beta[p],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_exact_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.5 - 1.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let d = LabeledDataset::from_rows(&rows, &y).unwrap();
        let m = fit(&d, 0.0).unwrap();
        for (r, &t) in rows.iter().zip(&y) {
            assert!((m.predict_row(r) - t).abs() < 1e-8);
        }
        assert!((m.coefficients()[0] - 2.0).abs() < 1e-8);
        assert!((m.intercept() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn singular_without_penalty() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let d = LabeledDataset::from_rows(&rows, &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(fit(&d, 0.0), Err(Error::SingularSystem(_))));
        assert!(fit(&d, 0.1).is_ok());
    }
}
