use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("pixel ({row}, {col}) is not covered by any patch")]
    UncoveredPixel { row: usize, col: usize },

    #[error(transparent)]
    Pgm(#[from] PgmError),

    #[error(transparent)]
    Model(#[from] ModelFormatError),

    #[error(transparent)]
    Dataset(#[from] DatasetFormatError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}

/// Failures while decoding a binary PGM (P5) file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("unsupported magic number {0:?} (only binary P5 is accepted)")]
    UnsupportedMagic(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("sample value {value} exceeds maxval {maxval}")]
    SampleOutOfRange { value: u32, maxval: u32 },
}

/// Failures while decoding a model file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFormatError {
    #[error("bad magic bytes, not a model file")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file is truncated")]
    Truncated,
    #[error("unknown architecture tag {0}")]
    UnknownArchitecture(u32),
    #[error("unknown activation tag {0}")]
    UnknownActivation(u32),
    #[error("inconsistent dimensions: {0}")]
    DimensionInconsistency(String),
    #[error("embedded operator does not match its seed")]
    OperatorMismatch,
    #[error("{0} trailing bytes after model payload")]
    TrailingBytes(usize),
}

/// Failures while decoding a patch dataset file.
#[derive(Debug, Error, PartialEq)]
pub enum DatasetFormatError {
    #[error("bad magic bytes, not a patch dataset")]
    BadMagic,
    #[error("unsupported dataset format version {0}")]
    UnsupportedVersion(u32),
    #[error("patch dataset is truncated")]
    Truncated,
    #[error("patch value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
}
