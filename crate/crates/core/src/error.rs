use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in input header")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("dataset still contains rows with missing values; run complete-case filtering first")]
    MissingValues,

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fold construction failed: {0}")]
    FoldConstruction(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("derivative matrix is numerically singular (condition number {condition:.3e}); check for collinear covariates")]
    Singular { condition: f64 },

    #[error("infinite odds: probability {0} is not strictly inside (0, 1)")]
    InfiniteOdds(f64),

    #[error("bootstrap unstable: {failed} of {total} resamples failed to converge")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("study failed: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// True for failures caused by the numerics rather than the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::Singular { .. } | Error::BootstrapUnstable { .. }
        )
    }
}
