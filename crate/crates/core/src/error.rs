use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the re-localisation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    /// Binary blob could not be decoded; `offset` is the byte position of the fault.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Text file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("database is empty")]
    EmptyDatabase,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no consensus: {0}")]
    NoConsensus(String),

    #[error("no overlap: {0}")]
    NoOverlap(String),

    #[error("empty overlap between image and point cloud")]
    EmptyOverlap,

    #[error("structural error: {0}")]
    Structural(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// An error raised while reading or writing a particular file.
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    /// Several independent inputs failed; one line per failure.
    #[error("{}", list(.0))]
    Many(Vec<Error>),
}

fn list(errors: &[Error]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")
}

impl Error {
    /// Attaches `path` unless the error already names a file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::Image { .. } | Error::InFile { .. }) => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
