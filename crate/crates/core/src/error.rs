use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmftError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("matrix is not symmetric: |K[{row}][{col}] - K[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("causal kernel has nonzero entry at ({row}, {col}); entries with s >= t must vanish")]
    NotCausal { row: usize, col: usize },

    #[error("cholesky factorization failed after jitter ladder {ladder:?}")]
    Cholesky { ladder: Vec<f64> },

    #[error("horizon mismatch: expected {expected}, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("dynamics diverged at step {step} (|value| = {value:e})")]
    Diverged { step: usize, value: f64 },

    #[error("kernel file: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DmftError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> DmftError {
    DmftError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
