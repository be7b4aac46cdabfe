use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular matrix (offending eigenvalue {eigenvalue:.3e})")]
    SingularMatrix { eigenvalue: f64 },

    #[error("fixed-point iteration failed to converge after {iterations} iterations (residual {residual:.3e})")]
    ConvergenceFailure { residual: f64, iterations: usize },

    #[error("matrix is not block structured: {0}")]
    NotBlockStructured(String),

    #[error("invalid block correlation: {0}")]
    InvalidBlockCorrelation(String),

    #[error("invalid distribution specification: {0}")]
    InvalidSpec(String),

    #[error("quadrature failed to converge (error estimate {estimate:.3e})")]
    QuadratureFailure { estimate: f64 },

    #[error("degenerate information matrix: diagonal entry {value:.3e} at index {index}")]
    DegenerateInformation { index: usize, value: f64 },

    #[error("filter failed at t = {t}: {reason}")]
    FilterFailure { t: usize, reason: String },

    #[error("estimation failed: {0}")]
    EstimationFailure(String),
}
