use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors surfaced by the command-line front end. Each maps to a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: FormatError },

    #[error("{0}")]
    Mismatch(String),

    #[error(transparent)]
    Pipeline(#[from] qscm_core::Error),
}

/// Reasons a stack or map file is rejected.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic, not a frame stack file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} trailing bytes after metadata")]
    TrailingBytes(u64),
    #[error("payload checksum mismatch: header {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("map: {0}")]
    Map(String),
}

impl CliError {
    /// Process exit status: 2 usage/config, 3 I/O, 4 malformed input file,
    /// 5 inputs that do not belong together, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Format { .. } => 4,
            CliError::Mismatch(_) => 5,
            CliError::Pipeline(e) => match e {
                qscm_core::Error::ProtocolMismatch { .. } => 5,
                qscm_core::Error::InvalidParameter { .. } | qscm_core::Error::EmptyRoi => 2,
                _ => 1,
            },
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, reason: FormatError) -> Self {
        CliError::Format { path: path.to_path_buf(), reason }
    }
}

pub type CliResult<T> = Result<T, CliError>;
