use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("path cannot be evaluated at s = {s} (first sample at {first})")]
    UnsupportedEvaluation { s: f64, first: f64 },

    #[error("measure rejected: {reason} (local integral {local_integral:?}, pair sum {pair_sum:?})")]
    RejectedMeasure {
        reason: String,
        local_integral: Option<f64>,
        pair_sum: Option<f64>,
    },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("quadrature diverges near s = 0 (fitted head exponent {exponent:.4})")]
    Divergent { exponent: f64 },

    #[error("{0}")]
    Statistics(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
