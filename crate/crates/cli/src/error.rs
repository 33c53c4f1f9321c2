use std::path::PathBuf;

use etsc_core::EtscError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed binary file at byte offset {offset}: {reason}")]
    BinaryParse { path: PathBuf, offset: usize, reason: String },

    #[error("{path}: malformed JSON at `{json_path}`: {reason}")]
    JsonParse { path: PathBuf, json_path: String, reason: String },

    #[error("incompatible files: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Core(#[from] EtscError),
}

impl CliError {
    /// 1 verification failure, 2 usage, 3 I/O or parse.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::BinaryParse { .. } | CliError::JsonParse { .. } => 3,
            CliError::Compatibility(_) => 1,
            CliError::Core(e) => match e {
                EtscError::InvalidSize(_)
                | EtscError::InvalidArgument(_)
                | EtscError::DecayTooStrong { .. } => 2,
                EtscError::Csv(_) => 3,
                _ => 1,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
