use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the admissible set of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    /// Optimisation or model fitting could not produce a usable estimate.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Numerical integration used by verification oracles did not converge.
    #[error("oracle error: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for failures that come from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Estimation(_) | Error::Oracle(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
