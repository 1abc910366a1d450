use thiserror::Error;

/// Errors raised across the toolkit.
///
/// A failing verification is never an error: checks return reports with a
/// verdict. Errors are reserved for malformed inputs and refused requests.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in mode {mode}: {what}")]
    DimensionMismatch { mode: usize, what: String },

    #[error("mode index {index} out of range (valid modes are 0..{n_modes})")]
    ModeOutOfRange { index: usize, n_modes: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gain argument {0} is negative; class-K-infinity gains are defined on [0, inf)")]
    NegativeGainArgument(f64),

    #[error("non-finite state encountered; last finite time t = {last_finite_time}")]
    BlowUp { last_finite_time: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
