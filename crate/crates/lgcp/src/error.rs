//! Crate-wide error type.
//!
//! Errors are grouped into the three failure classes the command-line tool
//! maps to exit codes: configuration (2), data (3), and numerical (4).

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad model/run configuration: unknown keys, malformed spec files,
    /// references to covariates that do not exist.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid input data: schema mismatches, domain violations, broken
    /// partitions.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure: factorization breakdown, non-convergence,
    /// degenerate integration grids.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
