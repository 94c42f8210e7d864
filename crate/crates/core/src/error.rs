use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Both vehicles sit exactly on the conflict point, so the log penalty is undefined.
    #[error("singular configuration: joint position at the conflict point")]
    SingularConfiguration,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("segment buffer is empty")]
    EmptyBuffer,

    #[error("all {skipped} segments failed their inner solve")]
    AllSegmentsSkipped { skipped: usize },

    #[error("kernel matrix is ill-conditioned even with jitter {jitter:e}; raise the jitter or remove duplicate inputs")]
    IllConditioned { jitter: f64 },

    #[error("strategy grid is incomplete; missing nodes {missing:?}")]
    IncompleteGrid { missing: Vec<usize> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("objective evaluation failed: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite, got {value}")))
    }
}
