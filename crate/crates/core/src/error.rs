use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input is empty")]
    EmptyInput,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },

    #[error("{name} = {value} is outside its domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation set of hypothesis {0} is empty")]
    EmptyValidationSet(usize),

    #[error("validation sets of hypotheses {0} and {1} overlap in {2} points; need at least {3}")]
    SmallOverlap(usize, usize, usize, usize),

    #[error("empirical Gibbs loss is zero; the optimal gamma is unbounded")]
    ZeroGibbsLoss,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the input (files, shapes, arguments)
    /// rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::EmptyInput
                | Error::Dimension(_)
                | Error::LabelOutOfRange { .. }
                | Error::InvalidArgument(_)
                | Error::EmptyValidationSet(_)
                | Error::SmallOverlap(..)
        )
    }
}
