use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("manifest is incomplete: missing tile at row {row}, col {col}")]
    IncompleteManifest { row: u32, col: u32 },

    #[error("invalid tile state: {0}")]
    InvalidState(String),

    #[error("model architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("model is not ready: {0}")]
    ModelNotReady(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
