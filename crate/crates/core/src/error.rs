use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file did not match its documented schema (missing column, bad header, bad key).
    #[error("schema error: {0}")]
    Schema(String),

    /// A numeric field was non-finite or had an impossible value.
    #[error("unit error at row {row}, column `{column}`: {message}")]
    Unit {
        row: usize,
        column: String,
        message: String,
    },

    /// A configuration or generator parameter was outside its documented range.
    #[error("invalid parameter `{name}`: {message}")]
    Spec { name: String, message: String },

    #[error("time {t} s is past the end of a non-cyclic motion ({end} s)")]
    PastEnd { t: f64, end: f64 },

    #[error("motion must be cyclic with a known period: {0}")]
    NotCyclic(String),

    #[error("simulation diverged at t = {time} s: {what}")]
    Diverged { time: f64, what: String },

    #[error("incompatible motions: {0}")]
    IncompatibleMotions(String),

    #[error("DMP fit failed on channel {channel} ({name}): {message}")]
    Fit {
        channel: usize,
        name: String,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn spec(name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            name: name.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
