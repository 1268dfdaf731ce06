//! JSON rendering for `estimate`. Numbers are written in scientific notation
//! with 17 significant digits so that repeated runs compare byte for byte.

use crossfit_core::{IntervalReport, VarianceDiagnostics};
use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// A float serialized as `d.dddddddddddddddde±x`; non-finite values become
/// `null`.
#[derive(Debug, Clone, Copy)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

fn vector(v: &DVector<f64>) -> Vec<Num> {
    v.iter().copied().map(Num).collect()
}

fn matrix(m: &DMatrix<f64>) -> Vec<Vec<Num>> {
    m.row_iter().map(|r| r.iter().copied().map(Num).collect()).collect()
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Variance {
    Clt {
        sigma_theta: Vec<Vec<Num>>,
        sigma_delta: Vec<Vec<Num>>,
        hessian: Vec<Vec<Num>>,
        sigma: Vec<Vec<Num>>,
        ratio: Num,
        n_eff: usize,
    },
    QuantileSet {
        grid_points: usize,
        accepted_points: usize,
        contiguous: bool,
    },
    OrderStatistic {
        lower_rank: usize,
        upper_rank: usize,
    },
}

#[derive(Serialize)]
pub struct EstimateOutput {
    method: String,
    estimand: String,
    trainer: String,
    estimate: Num,
    lower: Num,
    upper: Num,
    coordinate: usize,
    theta: Vec<Num>,
    theta_lower: Vec<Num>,
    theta_upper: Vec<Num>,
    alpha: Num,
    n: usize,
    #[serde(rename = "N")]
    big_n: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "B")]
    b: usize,
    seed: u64,
    variance: Variance,
    warnings: Vec<String>,
}

pub struct RunShape {
    pub estimand: String,
    pub trainer: String,
    pub n: usize,
    pub big_n: usize,
    pub folds: usize,
    pub bootstrap: usize,
}

impl EstimateOutput {
    pub fn new(report: &IntervalReport, shape: RunShape) -> Self {
        let (estimate, lower, upper) = report.primary();
        let variance = match &report.diagnostics {
            VarianceDiagnostics::Clt(v) => Variance::Clt {
                sigma_theta: matrix(&v.sigma_theta),
                sigma_delta: matrix(&v.sigma_delta),
                hessian: matrix(&v.hessian),
                sigma: matrix(&v.sigma),
                ratio: Num(v.ratio),
                n_eff: v.n_eff,
            },
            VarianceDiagnostics::QuantileSet(q) => Variance::QuantileSet {
                grid_points: q.grid_points,
                accepted_points: q.accepted_points,
                contiguous: q.contiguous,
            },
            VarianceDiagnostics::OrderStatistic { lower_rank, upper_rank } => Variance::OrderStatistic {
                lower_rank: *lower_rank,
                upper_rank: *upper_rank,
            },
        };
        EstimateOutput {
            method: report.method.to_string(),
            estimand: shape.estimand,
            trainer: shape.trainer,
            estimate: Num(estimate),
            lower: Num(lower),
            upper: Num(upper),
            coordinate: report.coordinate,
            theta: vector(&report.estimate),
            theta_lower: vector(&report.lower),
            theta_upper: vector(&report.upper),
            alpha: Num(report.alpha),
            n: shape.n,
            big_n: shape.big_n,
            k: shape.folds,
            b: shape.bootstrap,
            seed: report.seed,
            variance,
            warnings: report.warnings.clone(),
        }
    }
}
