use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// Problem file violates the schema; `field` is a dotted path.
    #[error("invalid problem at `{field}`: {msg}")]
    Schema { field: String, msg: String },

    #[error("invalid process: {0}")]
    Process(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("integration blew up on interval {interval}: {msg}")]
    Integration { interval: usize, msg: String },

    #[error("inverse embedding undefined: interval {interval} has w0 = {w0} below w0_min = {w0_min}")]
    ImpulsiveArc {
        interval: usize,
        w0: f64,
        w0_min: f64,
    },

    #[error("degenerate sample on interval {0}: w = 0 with w0 below the floor")]
    DegenerateSample(usize),

    #[error("parameter out of range: {0}")]
    Range(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mode mismatch: {0}")]
    Mode(String),

    #[error("linear program failed: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn schema(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
