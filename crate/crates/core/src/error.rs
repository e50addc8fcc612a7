use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    /// A time or coordinate outside the domain where an object is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid construction or call parameter.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Vector or matrix dimensions that do not line up.
    #[error("shape error: expected {expected}, got {got} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The integrator produced a non-finite or exploding state.
    #[error("divergence at step {step} (t = {t}): {reason}")]
    Divergence { step: u64, t: f64, reason: String },

    /// A theorem or lemma hypothesis does not hold for the given input.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
