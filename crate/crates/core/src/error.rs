use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid time: {0}")]
    InvalidTime(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid discount {0}: must lie strictly between 0 and 1")]
    InvalidDiscount(f64),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),
    #[error("invalid cost sequence: {0}")]
    InvalidSequence(String),
    #[error("honesty violated: {0}")]
    Honesty(String),
    #[error("enumeration too large: {paths} paths exceed cap {cap}")]
    EnumerationTooLarge { paths: u128, cap: u64 },
    #[error("unsupported time {0}")]
    UnsupportedTime(String),
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("formula mixes the kernel logic and the trajectory logic: {0}")]
    MixedGrammar(String),
    #[error("constant {0} outside [0,1]")]
    ConstantOutOfRange(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("invalid pseudometric: {0}")]
    InvalidPseudometric(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
