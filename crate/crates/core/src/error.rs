use thiserror::Error;

#[derive(Debug, Error)]
pub enum EtscError {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("relative error undefined for a zero reference kernel")]
    UndefinedMetric,

    #[error("decay factor {gamma} too strong: |t_{index}| / gamma^{index} exceeds 1e150")]
    DecayTooStrong { gamma: f64, index: usize },

    #[error("gradient descent diverged at iteration {iteration} (non-finite loss)")]
    Divergence { iteration: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(f64),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EtscError>;
