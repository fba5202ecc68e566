use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization failed even after jitter escalation, or a value became non-finite.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("need {needed} available actions, only {available} remain")]
    InsufficientActions { needed: usize, available: usize },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: ragged row at line {line}: expected {expected} cells, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{0}: file contains no data")]
    EmptyFile(PathBuf),

    #[error("{path}: line {line}: duplicate (user, item) pair ({user}, {item})")]
    DuplicatePair {
        path: PathBuf,
        line: usize,
        user: u64,
        item: u64,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
