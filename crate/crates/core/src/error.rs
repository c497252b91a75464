use thiserror::Error;

/// Errors raised anywhere in the estimation, limit-law and bootstrap pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no valid split: all projections are identical")]
    NoValidSplit,

    #[error("no feasible split found for any candidate direction")]
    NoFeasibleSplit,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidData(_)
            | Error::Dimension(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::NoValidSplit
            | Error::NoFeasibleSplit
            | Error::Singular(_)
            | Error::Convergence(_)
            | Error::Consistency(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
