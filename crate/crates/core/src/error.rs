use thiserror::Error;

/// Errors surfaced while validating model structures or running inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown block kind for block `{0}`")]
    UnknownBlockKind(String),
    #[error("block `{0}` has invalid size {1}")]
    InvalidBlockSize(String, usize),
    #[error("block `{name}`: {reason}")]
    InvalidBlock { name: String, reason: String },
    #[error("hyperparameter index {0} out of range (theta has {1} coordinates)")]
    HyperIndexOutOfRange(usize, usize),
    #[error("prior parameter out of domain: {0}")]
    PriorDomain(String),
    #[error("invalid survival payload: {0}")]
    InvalidPayload(String),
    #[error("non-finite likelihood at data row {row}: {reason}")]
    NonFiniteLikelihood { row: usize, reason: String },
    #[error("Newton iteration did not converge after {iterations} iterations (gradient sup-norm {grad_norm:.3e})")]
    NewtonNonConvergence { iterations: usize, grad_norm: f64 },
    #[error("matrix factorisation failed: {0}")]
    IndefiniteHessian(String),
    #[error("hyperparameter mode search did not converge: {0}")]
    ModeSearchNonConvergence(String),
    #[error("posterior sampling requires a fit with keep-config enabled")]
    ConfigNotRetained,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("marginal transform error: {0}")]
    Transform(String),
    #[error("oracle error: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, Error>;
