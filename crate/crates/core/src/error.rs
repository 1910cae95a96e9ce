use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV file: {0}")]
    Wav(String),

    #[error("unsupported WAV encoding: format tag {format_tag}, {bits} bits")]
    UnsupportedCodec { format_tag: u16, bits: u16 },

    #[error("audio is empty")]
    EmptyAudio,

    #[error("invalid audio clip: {0}")]
    InvalidClip(String),

    #[error("cannot resample from {from} Hz to {to} Hz: {reason}")]
    Resample { from: u32, to: u32, reason: String },

    #[error("sample rate mismatch: clip at {clip} Hz, expected {expected} Hz")]
    RateMismatch { clip: u32, expected: u32 },

    #[error("signal too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("channel {index} out of range for {count} channels")]
    ChannelOutOfRange { index: usize, count: usize },

    #[error("invalid channel partition: {0}")]
    Partition(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("scene generation failed: {0}")]
    Scene(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
