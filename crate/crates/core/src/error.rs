use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input contains no edges")]
    EmptyInput,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid node statics: p80 = {0} (must be > 0)")]
    InvalidStatics(f64),

    #[error("simulation diverged at step {step}: non-finite {what}")]
    Diverged { step: u64, what: &'static str },

    #[error("loss domain has {positive} positive and {negative} negative edges; both classes are required")]
    DegenerateLossDomain { positive: usize, negative: usize },

    #[error("{0}")]
    Evaluation(String),

    #[error("invalid parameter file: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
