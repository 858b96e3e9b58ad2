use std::path::PathBuf;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::codec::CodecError;
use crate::dac::DacError;
use crate::network::SolverError;
use crate::signal::SignalError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dac(#[from] DacError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

/// Machine-readable error class reported by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Range,
    Solver,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "CONFIG",
            ErrorCategory::Range => "RANGE",
            ErrorCategory::Solver => "SOLVER",
            ErrorCategory::Io => "IO",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Range => 3,
            ErrorCategory::Solver => 4,
            ErrorCategory::Io => 5,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use ErrorCategory::*;
        match self {
            Error::Codec(CodecError::Parse { .. } | CodecError::BadDigit { .. }) => Config,
            Error::Codec(_) => Range,
            Error::Solver(_) => Solver,
            Error::Dac(DacError::Config(_)) => Config,
            Error::Dac(DacError::DigitCount { .. } | DacError::Digit { .. }) => Range,
            Error::Dac(_) => Solver,
            Error::Signal(SignalError::Dac(e)) => Error::Dac(e.clone()).category(),
            Error::Signal(SignalError::Codec(e)) => Error::Codec(e.clone()).category(),
            Error::Signal(_) => Config,
            Error::Analysis(AnalysisError::Signal(e)) => Error::Signal(e.clone()).category(),
            Error::Analysis(AnalysisError::Dac(e)) => Error::Dac(e.clone()).category(),
            Error::Analysis(_) => Range,
            Error::Io { .. } => Io,
            Error::Usage(_) => Config,
        }
    }
}
