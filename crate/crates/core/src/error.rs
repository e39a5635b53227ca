use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid spiral: {0}")]
    InvalidSpiral(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error("degenerate contour: {0}")]
    DegenerateContour(String),

    #[error("degenerate contour in frame {frame}: {source}")]
    FrameContour {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate volume: {0}")]
    DegenerateVolume(String),

    #[error("label out of range: {0}")]
    Label(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("video file error: {0}")]
    Video(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("case generation failed: {0}")]
    Generation(String),

    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
