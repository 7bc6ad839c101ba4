use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The current parameters give (numerically) zero probability to a
    /// subject's censoring interval.
    #[error("degenerate interval probability for subject {subject}")]
    DegenerateInterval { subject: usize },

    #[error("hazard overflow: the fit diverged")]
    Divergence,

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("singular Schur block")]
    SingularSchur,

    #[error("singular Hessian block: {0}")]
    SingularHessian(String),

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("every penalty on the path failed to fit")]
    PathFailed,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
