use thiserror::Error;

/// Errors raised by model validation, path simulation, schemes and the error lab.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A time argument fell outside `[0, T]` or outside the interval it must belong to.
    #[error("time {t} outside [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The model, intensity or density broke a contract the numerics rely on
    /// (jump commutativity, intensity bound, positivity).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_time(t: f64, lo: f64, hi: f64) -> Result<()> {
    if t.is_nan() || t < lo || t > hi {
        Err(Error::Domain { t, lo, hi })
    } else {
        Ok(())
    }
}
