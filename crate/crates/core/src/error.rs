use thiserror::Error;

#[derive(Debug, Error)]
pub enum BpcaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("data matrix is rank deficient (smallest/largest singular value {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("line search failed after {0} halvings")]
    LineSearch(usize),
    #[error("iteration stalled: {0}")]
    Stalled(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BpcaError {
    /// Failures of the numerics on valid input, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            BpcaError::NonFinite(_)
                | BpcaError::NotPositiveDefinite(_)
                | BpcaError::Eigen(_)
                | BpcaError::LineSearch(_)
                | BpcaError::Stalled(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BpcaError>;
