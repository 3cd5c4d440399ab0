use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("fast path requires shared sigma")]
    HeterogeneousSigma,
    #[error("color modality requires per-point colors")]
    MissingColors,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite candidate loss")]
    NonFiniteCandidateLoss,
    /// Fitting diverged; `state` is the cloud the failing step rendered.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize, state: Box<crate::cloud::PointCloud> },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
