use std::path::PathBuf;

/// Broad failure classes, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input, inconsistent shapes, or a violated precondition.
    Validation,
    /// Filesystem trouble or a corrupt artifact on disk.
    Io,
    /// An algorithm failed to converge, diverged, or hit a degenerate value.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("class {class} out of range (class count {class_count})")]
    ClassOutOfRange { class: usize, class_count: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("{file}{}: {message}", row.map(|r| format!(", row {r}")).unwrap_or_default())]
    Validation {
        file: String,
        row: Option<usize>,
        message: String,
    },

    #[error("format error in {path} at byte offset {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("{stage} diverged (non-finite loss); try a smaller learning_rate")]
    Divergence { stage: &'static str },

    #[error("prediction vector has zero norm; cosine similarity is undefined")]
    DegeneratePrediction,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::ClassOutOfRange { .. }
            | Error::EmptyClass(_)
            | Error::Validation { .. } => ErrorKind::Validation,
            Error::Format { .. } | Error::Io { .. } => ErrorKind::Io,
            Error::NumericalFailure(_)
            | Error::Divergence { .. }
            | Error::DegeneratePrediction => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(file: impl Into<String>, row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Validation {
            file: file.into(),
            row,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
