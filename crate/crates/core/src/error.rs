use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A user-supplied value failed validation. `field` names the offending input.
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("checkpoint integrity check failed for {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("non-finite loss `{loss}` at iteration {iteration}; batch dumped to {dump}")]
    NonFinite {
        loss: String,
        iteration: u64,
        dump: PathBuf,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Config(String),

    #[error(transparent)]
    Torch(#[from] tch::TchError),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
