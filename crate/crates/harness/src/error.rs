//! Harness-level errors and their process exit codes.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{}: {reason}", path.display())]
    ConfigFile { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] ttbn_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Exit codes: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use ttbn_core::Error as Core;
        match self {
            HarnessError::Config { .. } | HarnessError::ConfigFile { .. } => 2,
            HarnessError::Io { .. } => 4,
            HarnessError::Core(core) => {
                let mut inner = core;
                while let Core::InBatch { source, .. } = inner {
                    inner = source;
                }
                match inner {
                    Core::InvalidSpec { .. }
                    | Core::LabelOutOfRange { .. }
                    | Core::CsvParse { .. }
                    | Core::DimMismatch { .. } => 2,
                    Core::Io { .. }
                    | Core::BadMagic { .. }
                    | Core::VersionMismatch { .. }
                    | Core::ChecksumMismatch { .. }
                    | Core::Truncated { .. } => 4,
                    _ => 3,
                }
            }
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
