use thiserror::Error;

/// Errors produced by the simulation and estimation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} is not supported here (need d >= {1})")]
    InvalidDimension(usize, usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate state: cannot project the zero vector onto the energy sphere")]
    DegenerateState,

    #[error("particle index {index} out of range (system has {count} particles)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("requested horizon {requested} exceeds available data horizon {available}")]
    InsufficientData { requested: f64, available: f64 },

    #[error("initial state has |u|^2 = {actual}, expected {expected}")]
    InvalidInitialState { expected: f64, actual: f64 },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("step rejected {0} times in a row; step size underflow")]
    StepSizeUnderflow(u32),

    #[error("conditioning vector block {0} does not have unit norm")]
    InvalidConditioning(usize),

    #[error("sample too small: need at least {need}, got {got}")]
    SampleTooSmall { need: usize, got: usize },

    #[error("time {0} is not a grid point")]
    NotAGridPoint(f64),

    #[error("malformed input at line {line}: {reason}")]
    MalformedInput { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
