//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    DimMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("{op} requires a non-empty batch")]
    EmptyBatch { op: &'static str },

    #[error("{op} requires at least 2 rows for batch statistics, got {rows}")]
    DegenerateBatch { op: &'static str, rows: usize },

    #[error("non-finite function value while perturbing entry ({row}, {col})")]
    NonFiniteEval { row: usize, col: usize },

    #[error("{track} running statistics are uninitialized (no batches tracked)")]
    UninitializedStats { track: &'static str },

    #[error("label {label} out of range for {num_classes} classes at sample {index}")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        num_classes: usize,
    },

    #[error("non-finite loss: {context}")]
    NonFiniteLoss { context: String },

    #[error("invalid probability row {row}: {reason}")]
    InvalidProbabilities { row: usize, reason: String },

    #[error("batch {index}: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid spec: {reason}")]
    InvalidSpec { reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: bad magic, not a {expected} file", path.display())]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{}: unsupported format version {found} (this build reads version {supported})", path.display())]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{}: checksum mismatch, file is corrupted", path.display())]
    ChecksumMismatch { path: PathBuf },

    #[error("{}: truncated file ({detail})", path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("{}:{line}: {reason}", path.display())]
    CsvParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl Error {
    /// Wrap an error with the index of the stream batch it occurred in.
    pub fn in_batch(self, index: usize) -> Error {
        Error::InBatch {
            index,
            source: Box::new(self),
        }
    }
}
