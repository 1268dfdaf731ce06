use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{QuantileSet, VarianceReport};

/// Which estimator and interval construction produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    CrossPrediction,
    Classical,
    Ppi { train_fraction: f64 },
    NoDebias,
    NoFolds,
}

impl Method {
    pub const DEFAULT_PPI_FRACTION: f64 = 0.5;

    /// Parses a tag, resolving a bare `ppi` to `ppi:<default_fraction>`.
    pub fn parse_with_default(s: &str, default_fraction: f64) -> Result<Self> {
        let method = match s.trim() {
            "cross" => Method::CrossPrediction,
            "classical" => Method::Classical,
            "nodebias" => Method::NoDebias,
            "nofolds" => Method::NoFolds,
            "ppi" => Method::Ppi {
                train_fraction: default_fraction,
            },
            other => match other.strip_prefix("ppi:") {
                Some(f) => Method::Ppi {
                    train_fraction: f.parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad PPI train fraction in method `{other}`"))
                    })?,
                },
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown method `{other}` (expected cross, classical, ppi[:<fraction>], nodebias or nofolds)"
                    )))
                }
            },
        };
        if let Method::Ppi { train_fraction } = method {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "PPI train fraction must lie in (0, 1), got {train_fraction}"
                )));
            }
        }
        Ok(method)
    }

    pub fn uses_folds(&self) -> bool {
        matches!(self, Method::CrossPrediction | Method::NoDebias)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::CrossPrediction => f.write_str("cross"),
            Method::Classical => f.write_str("classical"),
            Method::Ppi { train_fraction } => write!(f, "ppi:{train_fraction}"),
            Method::NoDebias => f.write_str("nodebias"),
            Method::NoFolds => f.write_str("nofolds"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_default(s, Self::DEFAULT_PPI_FRACTION)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// How an interval's width was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum VarianceDiagnostics {
    /// Sandwich covariance behind a CLT interval.
    Clt(VarianceReport),
    /// Inverted subgradient test for a quantile.
    QuantileSet(QuantileSet),
    /// Binomial order-statistic bounds (1-based ranks).
    OrderStatistic { lower_rank: usize, upper_rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub method: Method,
    /// Full parameter vector.
    pub estimate: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Index into `estimate` of the reported coefficient.
    pub coordinate: usize,
    pub alpha: f64,
    pub diagnostics: VarianceDiagnostics,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl IntervalReport {
    /// `(estimate, lower, upper)` of the reported coordinate.
    pub fn primary(&self) -> (f64, f64, f64) {
        let c = self.coordinate;
        (self.estimate[c], self.lower[c], self.upper[c])
    }

    pub fn width(&self) -> f64 {
        let (_, lo, hi) = self.primary();
        hi - lo
    }

    pub fn covers(&self, truth: f64) -> bool {
        let (_, lo, hi) = self.primary();
        lo <= truth && truth <= hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for tag in ["cross", "classical", "ppi:0.5", "ppi:0.25", "nodebias", "nofolds"] {
            let m: Method = tag.parse().unwrap();
            assert_eq!(m.to_string(), tag);
        }
        assert_eq!(
            Method::parse_with_default("ppi", 0.3).unwrap(),
            Method::Ppi { train_fraction: 0.3 }
        );
        let err = "bogus".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("bogus"));
        assert!("ppi:1.0".parse::<Method>().is_err());
    }
}
