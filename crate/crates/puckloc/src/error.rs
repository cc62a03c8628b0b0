use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of domain: {0}")]
    Domain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{row}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        row: u64,
        field: String,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("clip too short: {got} frames, need at least {need}")]
    InsufficientFrames { got: usize, need: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Classifies errors that stem from operator input (bad paths, malformed
    /// files, out-of-range values) as opposed to internal failures. CLI exit
    /// codes are derived from this.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Domain(_)
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::InsufficientFrames { .. }
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}
