use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DkdError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("clip directory {0} has no annotations.json")]
    MissingManifest(PathBuf),
    #[error("malformed annotations in {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("count mismatch: {what} (expected {expected}, found {found})")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("degenerate reference distance in frame {frame}")]
    DegenerateReference { frame: usize },
    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),
    #[error("non-finite {what} at step {step}: {detail}")]
    NonFinite { what: String, step: u64, detail: String },
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("checkpoint was written for model config {found}, expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error(transparent)]
    Graph(#[from] dkd_autograd::GraphError),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DkdError>;

impl DkdError {
    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DkdError::Config(_)
                | DkdError::Shape(_)
                | DkdError::MissingManifest(_)
                | DkdError::MalformedManifest { .. }
                | DkdError::CountMismatch { .. }
                | DkdError::UnknownLayerKind(_)
                | DkdError::ConfigHashMismatch { .. }
        )
    }
}
