use std::path::PathBuf;

use crate::timing::Phase;

/// Errors produced by the benchmarking library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("unsupported descriptor for {algorithm}: {reason}")]
    Unsupported {
        algorithm: &'static str,
        reason: String,
    },

    #[error("phase {0} started twice without an update")]
    DoubleStart(Phase),

    #[error("phase {0} updated without a matching start")]
    UpdateWithoutStart(Phase),

    #[error("snapshot taken with pending starts: {0:?}")]
    PendingStart(Vec<Phase>),

    #[error("cannot aggregate an empty list of timing reports")]
    EmptyAggregate,

    #[error("call count mismatch for {phase} in report {index}: expected {expected}, found {found}")]
    CallCountMismatch {
        phase: Phase,
        index: usize,
        expected: u64,
        found: u64,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("{path}: missing columns {missing:?}")]
    SchemaMismatch { path: PathBuf, missing: Vec<String> },

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("no keys shared by main and baseline results")]
    EmptyJoin,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from reading or writing files.
    pub fn is_io_or_schema(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Csv { .. } | Error::SchemaMismatch { .. } | Error::Parse { .. }
        )
    }
}
