use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid market specification: {0}")]
    InvalidMarket(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("inadmissible {what} at step {step}: {detail}")]
    Inadmissible {
        what: &'static str,
        step: usize,
        detail: String,
    },

    #[error("volatility matrix is singular")]
    SingularVolatility,

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("unbounded saddle problem")]
    Unbounded,

    #[error("condition {which} violated at t = {time}")]
    ConditionViolated { which: u8, time: f64 },

    #[error("consumption weight is not integrable: {0}")]
    NonIntegrable(String),

    #[error("Y path covers [0, {covered}] but [0, {required}] is required")]
    PathTooShort { covered: f64, required: f64 },

    #[error("drift-only preferences need a Z path")]
    MissingZ,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
