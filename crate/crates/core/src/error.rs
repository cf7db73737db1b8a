use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("non-positive price {value} for {asset} on {date}")]
    NonPositivePrice {
        date: chrono::NaiveDate,
        asset: String,
        value: f64,
    },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("expected length {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value: {0}")]
    NonFinite(f64),
    #[error("grid cell ({row}, {col}) assigned twice")]
    DuplicateCell { row: usize, col: usize },
    #[error("coupling matrix has spectral radius {0:.4} >= 1")]
    Unstable(f64),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{method}: {message}")]
    Forecast { method: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }
}
