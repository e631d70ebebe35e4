use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while parsing a binary feature or checkpoint file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },
    #[error("unknown modality tag {0}")]
    BadModality(u8),
    #[error("modality mismatch: expected {expected}, found {found}")]
    ModalityMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("empty dimensions: frames={frames}, dim={dim}")]
    EmptyDims { frames: u32, dim: u32 },
    #[error("truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("trailing data: expected {expected} bytes, got {actual}")]
    Trailing { expected: u64, actual: u64 },
    #[error("checksum mismatch")]
    Checksum,
    #[error("malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("video {video}: {reason}")]
    Video { video: String, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at epoch {epoch}, video {video}: {detail}")]
    Diverged {
        epoch: usize,
        video: String,
        detail: String,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn video(video: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Video {
            video: video.into(),
            reason: reason.into(),
        }
    }
}
