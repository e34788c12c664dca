use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state became non-finite during integration.
    #[error("integration fault at t = {t:.6} s: non-finite {what}")]
    NonFinite { what: &'static str, t: f64 },

    /// A scenario run aborted; `last_valid` is the index of the last good record.
    #[error("run aborted after record {last_valid}: {source}")]
    Aborted {
        last_valid: usize,
        #[source]
        source: Box<Error>,
    },

    /// A function was evaluated outside its mathematical domain.
    #[error("domain fault: {0}")]
    Domain(&'static str),

    /// An operation was used on a model it does not apply to.
    #[error("misuse: {0}")]
    Misuse(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("cannot parse {}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
