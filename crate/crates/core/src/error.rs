use thiserror::Error;

/// Errors raised by model construction, updates and prediction.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DlgpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("kernel matrix is not positive definite (jitter escalated to {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("cannot fit a model to an empty training set")]
    EmptyTrainingSet,

    #[error("model holds no training data")]
    ModelEmpty,

    #[error("division did not produce a leaf with free capacity after {0} attempts")]
    DegenerateDivision(usize),

    #[error("tree depth exceeds the addressable heap index range")]
    TreeTooDeep,

    #[error("target variance is zero")]
    DegenerateTargets,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = DlgpError> = std::result::Result<T, E>;
