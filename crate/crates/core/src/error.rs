use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters violate an admissibility condition; the message names it.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration failed at t = {t}: {what}")]
    IntegrationFailure { t: f64, what: String },

    #[error("values exceed double range at t = {t}")]
    Overflow { t: f64 },

    #[error("quadrature did not converge: last two levels {previous} and {last}")]
    Quadrature { previous: f64, last: f64 },

    #[error("simulation step {step}: {what}")]
    Simulation { step: u64, what: String },

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
