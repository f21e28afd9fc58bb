use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transition row P_{h}(.|s={state}, a={action}) is not a probability vector (sum = {sum})")]
    Simplex {
        h: usize,
        state: usize,
        action: usize,
        sum: f64,
    },

    #[error("mean reward R_{h}(s={state}, a={action}) = {value} lies outside [0, 1]")]
    RewardRange {
        h: usize,
        state: usize,
        action: usize,
        value: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
