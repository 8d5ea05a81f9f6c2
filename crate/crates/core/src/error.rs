use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: malformed input: {message}")]
    Format { context: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate sample ({image_id}, patch {patch_index})")]
    DuplicateSample { image_id: String, patch_index: u32 },

    #[error("class `{0}` is not registered")]
    UnknownClass(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("missing hyperparameter `{key}` for {variant}")]
    MissingHyperparameter {
        variant: &'static str,
        key: &'static str,
    },

    #[error("{0} is a registered variant without an implementation")]
    UnimplementedVariant(&'static str),

    #[error("did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's files or arguments rather than
    /// by a computation that failed.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::DimensionMismatch { .. }
                | Error::DuplicateSample { .. }
                | Error::UnknownClass(_)
                | Error::InvalidInput(_)
                | Error::MissingHyperparameter { .. }
        )
    }
}
