use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmFamily {
    Gaussian,
    Logistic,
}

/// The target parameter and its loss family.
///
/// Regression variants select a subset of feature columns (`regressors`,
/// zero-based) and report the coefficient at position `report` of that
/// subset. No intercept is added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimandSpec {
    Mean,
    Quantile {
        q: f64,
    },
    LinearRegression {
        regressors: Vec<usize>,
        report: usize,
    },
    Glm {
        family: GlmFamily,
        regressors: Vec<usize>,
        report: usize,
    },
}

impl EstimandSpec {
    pub fn quantile(q: f64) -> Result<Self> {
        let spec = EstimandSpec::Quantile { q };
        spec.validate(None)?;
        Ok(spec)
    }

    pub fn linear_regression(regressors: Vec<usize>, report: usize) -> Result<Self> {
        let spec = EstimandSpec::LinearRegression { regressors, report };
        spec.validate(None)?;
        Ok(spec)
    }

    pub fn glm(family: GlmFamily, regressors: Vec<usize>, report: usize) -> Result<Self> {
        let spec = EstimandSpec::Glm {
            family,
            regressors,
            report,
        };
        spec.validate(None)?;
        Ok(spec)
    }

    /// Checks parameter ranges, and column indices when `n_features` is known.
    pub fn validate(&self, n_features: Option<usize>) -> Result<()> {
        match self {
            EstimandSpec::Mean => Ok(()),
            EstimandSpec::Quantile { q } => {
                if *q > 0.0 && *q < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "quantile level must lie in (0,1), got {q}"
                    )))
                }
            }
            EstimandSpec::LinearRegression { regressors, report }
            | EstimandSpec::Glm {
                regressors, report, ..
            } => {
                if regressors.is_empty() {
                    return Err(Error::InvalidConfig("regressor list is empty".into()));
                }
                let mut sorted = regressors.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != regressors.len() {
                    return Err(Error::InvalidConfig("regressor indices repeat".into()));
                }
                if *report >= regressors.len() {
                    return Err(Error::InvalidConfig(format!(
                        "report coordinate {report} outside the {} regressors",
                        regressors.len()
                    )));
                }
                if let Some(p) = n_features {
                    if let Some(bad) = regressors.iter().find(|&&c| c >= p) {
                        return Err(Error::InvalidConfig(format!(
                            "regressor column {bad} outside the {p} feature columns"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            EstimandSpec::Mean | EstimandSpec::Quantile { .. } => 1,
            EstimandSpec::LinearRegression { regressors, .. }
            | EstimandSpec::Glm { regressors, .. } => regressors.len(),
        }
    }

    /// Index into `theta` of the reported coordinate.
    pub fn report_coordinate(&self) -> usize {
        match self {
            EstimandSpec::LinearRegression { report, .. } | EstimandSpec::Glm { report, .. } => {
                *report
            }
            _ => 0,
        }
    }

    pub fn regressors(&self) -> Option<&[usize]> {
        match self {
            EstimandSpec::LinearRegression { regressors, .. }
            | EstimandSpec::Glm { regressors, .. } => Some(regressors),
            _ => None,
        }
    }

    /// Regressor subvector `x_S` of a feature row.
    pub fn select(&self, row: &[f64]) -> DVector<f64> {
        match self.regressors() {
            Some(cols) => DVector::from_iterator(cols.len(), cols.iter().map(|&c| row[c])),
            None => DVector::zeros(0),
        }
    }

    pub fn is_regression(&self) -> bool {
        self.regressors().is_some()
    }
}

impl fmt::Display for EstimandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = |r: &[usize]| {
            r.iter()
                .map(|c| (c + 1).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            EstimandSpec::Mean => write!(f, "mean"),
            EstimandSpec::Quantile { q } => write!(f, "quantile:{q}"),
            EstimandSpec::LinearRegression { regressors, report } => {
                write!(f, "ols:{}:{}", cols(regressors), report + 1)
            }
            EstimandSpec::Glm {
                family,
                regressors,
                report,
            } => {
                let tag = match family {
                    GlmFamily::Gaussian => "gaussian",
                    GlmFamily::Logistic => "logit",
                };
                write!(f, "{tag}:{}:{}", cols(regressors), report + 1)
            }
        }
    }
}

/// Parses `mean`, `quantile:<q>`, `ols:<cols>:<coord>`, `logit:<cols>:<coord>`
/// or `gaussian:<cols>:<coord>`. Column and coordinate numbers are one-based
/// (`1` is feature column `x1`, and the first listed regressor).
impl FromStr for EstimandSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::InvalidConfig(format!("cannot parse estimand '{s}'"));
        let one_based = |t: &str| -> Result<usize> {
            let v: usize = t.trim().parse().map_err(|_| bad())?;
            v.checked_sub(1).ok_or_else(bad)
        };
        match parts.as_slice() {
            ["mean"] => Ok(EstimandSpec::Mean),
            ["quantile", q] => EstimandSpec::quantile(q.trim().parse().map_err(|_| bad())?),
            [kind @ ("ols" | "logit" | "gaussian"), cols, coord] => {
                let regressors = cols
                    .split(',')
                    .map(one_based)
                    .collect::<Result<Vec<_>>>()?;
                let report = one_based(coord)?;
                match *kind {
                    "ols" => EstimandSpec::linear_regression(regressors, report),
                    "logit" => EstimandSpec::glm(GlmFamily::Logistic, regressors, report),
                    _ => EstimandSpec::glm(GlmFamily::Gaussian, regressors, report),
                }
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for EstimandSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimandSpec> for String {
    fn from(e: EstimandSpec) -> String {
        e.to_string()
    }
}
