//! Crate-wide error type.
//!
//! Variants are grouped by what the CLI maps them to: configuration problems,
//! data problems (parse/corrupt/missing), and runtime validation failures.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A line-oriented text file failed to parse.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// A container file's header and payload disagree.
    #[error("corrupt container {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    /// I/O failure with path context.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An operation's precondition was violated.
    #[error("{0}")]
    Validation(String),

    /// The recording is too short for the requested crop and is skipped
    /// rather than padded.
    #[error("recording {id} too short: {have_s:.1} s < {need_s:.1} s")]
    RecordingTooShort { id: String, have_s: f64, need_s: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// CLI exit code: 2 config, 3 data, 4 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Corrupt { .. } | Error::Io { .. } => 3,
            Error::Validation(_) | Error::RecordingTooShort { .. } => 4,
        }
    }
}
