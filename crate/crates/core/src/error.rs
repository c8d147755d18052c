use thiserror::Error;

/// Every failure the library can report. The CLI maps all of them to exit code 1.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("degenerate bandwidth: all {0} points are identical")]
    DegenerateBandwidth(usize),
    #[error("ill-conditioned system: factorization failed at jitter {jitter:e} (condition estimate {condition:e})")]
    IllConditioned { jitter: f64, condition: f64 },
    #[error("estimation failure: {0}")]
    Estimation(String),
    #[error("insufficient data: level '{0}' has no observations")]
    InsufficientData(String),
    #[error("rank-deficient design: numerical rank {rank} of {cols} columns")]
    RankDeficient { rank: usize, cols: usize },
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("undefined solution: {0}")]
    Undefined(String),
    #[error("sample size {0} is below the minimum of 10")]
    SampleSize(usize),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    BadCell { row: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
