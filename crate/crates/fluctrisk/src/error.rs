use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("covariance matrix is not invertible: {0}")]
    SingularCovariance(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("quadrature did not converge: {0} (error estimate {1:.3e})")]
    QuadratureFailure(String, f64),
    #[error("root finding failed: {0}")]
    RootFinding(String),
    #[error("requested quantile {alpha} beyond resolvable tail mass (max alpha {max_alpha})")]
    UnresolvableQuantile { alpha: f64, max_alpha: f64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
