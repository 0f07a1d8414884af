use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    Empty,

    #[error("dimension mismatch at row {row}: expected {expected}, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },

    #[error("non-finite {term} at coordinate {index}")]
    NonFiniteCoordinate { term: &'static str, index: usize },

    #[error("non-finite {term} at outer step {step}")]
    NonFiniteTerm { term: &'static str, step: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("row {row}: value {value} is not an integer state in [0, {states})")]
    InvalidState { row: usize, value: f64, states: usize },

    #[error("state {state} has zero probe mass but receives mass {mass:e}")]
    ZeroProbe { state: usize, mass: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
