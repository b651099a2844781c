use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library. The CLI maps [`Error::is_validation`]
/// errors to exit code 1 and everything else to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("latitude {value} out of range [-90, 90] degrees")]
    LatitudeOutOfRange { value: f64 },

    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("dimension {dim} is not a multiple of 3 (spherical encoding requires a multiple of 3; enable zero padding to relax)")]
    NotMultipleOfThree { dim: usize },

    #[error("dimension {dim} must be even for {what}")]
    OddDimension { dim: usize, what: &'static str },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("encoding configurations differ")]
    ConfigMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("token {id}: {message}")]
    Token { id: String, message: String },

    #[error("feature {index}: {message}")]
    GeoJson { index: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than internal failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
