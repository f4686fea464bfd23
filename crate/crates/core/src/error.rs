use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("signal is empty")]
    EmptySignal,
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("target network parameters contain non-finite values")]
    NonFiniteParams,
    #[error("a coordinate grid needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("input of {len} samples is shorter than the encoder minimum of {min}")]
    InputTooShort { len: usize, min: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("reference spectrogram is silent")]
    SilentReference,
    #[error("unknown loss preset {0:?}")]
    UnknownPreset(String),
    #[error("signal has zero variance")]
    DegenerateSignal,
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("break frequency {freq} Hz must lie in (0, {nyquist}) Hz")]
    InvalidBreakFrequency { freq: f64, nyquist: f64 },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("checkpoint I/O failed: {0}")]
    CheckpointIo(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_same_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}
