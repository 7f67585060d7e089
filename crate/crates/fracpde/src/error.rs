use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fractional order alpha = {0}: need 1 < alpha <= 2")]
    InvalidOrder(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported boundary pair `{0}`")]
    UnsupportedPair(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("series did not converge: {0}")]
    NonConvergence(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("time step defect check failed: {0}")]
    StepFailure(String),
    #[error("root finding failed: {0}")]
    RootFind(String),
    #[error("empty path ensemble")]
    EmptyEnsemble,
    #[error("rate matrix invariant violated: {0}")]
    Invariant(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
