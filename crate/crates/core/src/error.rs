use thiserror::Error;

pub type Result<T> = std::result::Result<T, CalibError>;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("loss is not convex in the predicted probability: {0}")]
    NonConvex(String),

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CalibError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CalibError::Invalid(msg.into())
    }

    /// Numerical failures map to a distinct CLI exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(self, CalibError::NonConvergence { .. } | CalibError::Diverged { .. })
    }
}
