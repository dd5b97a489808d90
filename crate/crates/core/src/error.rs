use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Io,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: decode error at byte {offset}: {reason}")]
    Decode {
        path: String,
        offset: usize,
        reason: String,
    },

    #[error("{path}: unsupported format: {reason}")]
    UnsupportedFormat { path: String, reason: String },

    #[error("ingestion failed: {reason}{}", format_paths(.paths))]
    Ingest { reason: String, paths: Vec<PathBuf> },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("modality mismatch: expected {expected}, got {actual}")]
    ModalityMismatch { expected: String, actual: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("unknown subject: {0}")]
    UnknownSubject(String),

    #[error("empty template store")]
    EmptyStore,

    #[error("{path}: bad container: {reason}")]
    Container { path: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn format_paths(paths: &[PathBuf]) -> String {
    if paths.is_empty() {
        return String::new();
    }
    let list: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    format!(" [{}]", list.join(", "))
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }
}
