use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("residual jacobian is singular")]
    SingularJacobian,
    #[error("contact solve did not converge at step {step} (residual {residual:.3e}, rho {rho:.1e})")]
    NoConvergence { step: usize, residual: f64, rho: f64 },
    #[error("stage {stage}: impulse block E is singular")]
    SingularE { stage: usize },
    #[error("stage {stage}: condensed schur complement is rank deficient")]
    RankDeficientSchur { stage: usize },
    #[error("block {stage} of the KKT schur complement is not positive definite")]
    NotPositiveDefinite { stage: usize },
    #[error("invalid {what}: {reason}")]
    Validation { what: &'static str, reason: String },
    #[error("reference generation failed: {0}")]
    GenerationFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            what,
            reason: reason.into(),
        }
    }
}
