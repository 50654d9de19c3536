use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("point {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("singular coordinate transformation at xi = {xi:?} (det = {det:e})")]
    Singular { xi: [f64; 3], det: f64 },

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("particle {index} moved {excursion} logical units across xi1; time step too large")]
    StepTooLarge { index: usize, excursion: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("inconsistent boundary crossing record: {0}")]
    Crossing(String),

    #[error("config error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config error for key `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::ConfigParse { .. } | Error::ConfigValue { .. } | Error::Parameter(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
