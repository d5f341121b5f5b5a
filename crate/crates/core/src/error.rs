use std::io;

use thiserror::Error;

/// Errors produced anywhere in the keyword-spotting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed event stream on channel {channel}: {reason}")]
    MalformedStream { channel: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad magic in model file")]
    Magic,

    #[error("checksum mismatch in model file")]
    Checksum,

    #[error("unsupported model file version {0}")]
    Version(u32),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
