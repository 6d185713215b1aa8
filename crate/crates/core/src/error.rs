use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("fit diverged: {reason}; last finite parameters {last_theta:?}")]
    FitDiverged {
        reason: String,
        last_theta: Vec<f64>,
    },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
