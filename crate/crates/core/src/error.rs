use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("environment error: {0}")]
    Environment(String),

    #[error("cannot load environment table {path}: {reason}")]
    Load { path: String, reason: String },

    /// An estimator hit an empty conditioning cell.
    #[error("estimation error: empty conditioning cell {cell}")]
    Estimation { cell: String },

    #[error("decomposition error: {0}")]
    Decomposition(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("overlap violation: cumulative acceptance probability {0} is zero")]
    OverlapViolation(f64),

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metrics format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn cell(cell: impl Into<String>) -> Self {
        Error::Estimation { cell: cell.into() }
    }
}
