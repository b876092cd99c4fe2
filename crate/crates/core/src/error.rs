//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Error)]
pub enum Error {
    /// The hierarchy or series frame is malformed, or they do not fit together.
    #[error("structural error: {0}")]
    Structure(String),

    /// A parameter is out of its admissible range.
    #[error("parameter error: {name}: {reason}")]
    Parameter { name: String, reason: String },

    /// Input data cannot be used (too short, non-finite, wrong length, ...).
    #[error("data error{}: {reason}", id.as_ref().map(|i| format!(" [{i}]")).unwrap_or_default())]
    Data { id: Option<String>, reason: String },

    /// Odds are undefined because the value and all of its siblings' rivals are zero.
    #[error("undefined odds for {id} at t={t}: all other siblings are zero and smoothing is 0")]
    UndefinedOdds { id: String, t: usize },

    /// Every point of an RMSPE computation was excluded by the zero policy.
    #[error("undefined score: all {excluded} points have zero actuals")]
    UndefinedScore { excluded: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn data(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Data {
            id: Some(id.into()),
            reason: reason.into(),
        }
    }

    pub(crate) fn data_anon(reason: impl Into<String>) -> Self {
        Error::Data {
            id: None,
            reason: reason.into(),
        }
    }

    /// Attach a series id to a data error that does not carry one yet.
    pub fn with_id(self, id: &str) -> Self {
        match self {
            Error::Data { id: None, reason } => Error::Data {
                id: Some(id.to_string()),
                reason,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
