use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in {dataset} at row {row}, column {column}")]
    NonFinite {
        dataset: &'static str,
        row: usize,
        column: usize,
    },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("singular Hessian (smallest eigenvalue {min_eigenvalue:e})")]
    SingularHessian { min_eigenvalue: f64 },

    #[error("Newton solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("empty confidence set (closest normalized statistic {closest_ratio:.4} at theta={closest_theta})")]
    EmptyConfidenceSet {
        closest_theta: f64,
        closest_ratio: f64,
    },

    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
