use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no positive demand observations")]
    NoPositiveDemand,

    #[error("invalid lead-time observation: {0}")]
    InvalidLeadTime(i64),

    #[error("probability out of range: {0}")]
    ProbabilityOutOfRange(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("action {action} out of range 0..={max}")]
    ActionOutOfRange { action: u32, max: u32 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
