use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported channel count {0} (mono required)")]
    ChannelCount(u16),
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },
    #[error("signal too short: need at least {needed} samples, got {actual}")]
    TooShort { needed: usize, actual: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("SNR undefined: {0} has zero power")]
    ZeroPower(&'static str),
    #[error("unstable LPC polynomial")]
    UnstableFilter,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("malformed bitstream: {0}")]
    Bitstream(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model mismatch: {0}")]
    Model(String),
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
}

impl Error {
    /// True for errors caused by the environment (files, formats on disk)
    /// rather than by the data being processed.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Wav(hound::Error::IoError(_)))
    }
}
