use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at {path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    #[error("unknown class label {0:?}")]
    Label(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("task derivation error: {0}")]
    TaskDerivation(String),

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("stream error: {0}")]
    Stream(String),

    #[error("registry error: unknown backbone {0:?}")]
    Registry(String),

    #[error("weight load error: {0}")]
    WeightLoad(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("prediction error: {0}")]
    Prediction(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("ROC undefined: {0}")]
    RocUndefined(String),

    #[error("aggregation error: missing accuracy for task {0}")]
    Aggregation(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
