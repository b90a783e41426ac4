//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any `ekd` operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("non-finite input")]
    NonFinite,

    #[error("invalid temperature: {0}")]
    InvalidTemperature(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("alpha out of range: {0}")]
    InvalidAlpha(f64),

    #[error("invalid fraction r={0}: buckets would overlap or be empty")]
    InvalidFraction(f64),

    #[error("invalid temperature policy: {0}")]
    InvalidPolicy(String),

    #[error("sample id mismatch: {0}")]
    IdMismatch(String),

    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload")]
    Truncated,

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("degenerate logit column {0}")]
    DegenerateColumn(usize),

    #[error("augmentation error: {0}")]
    Augment(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid inputs or configuration, as opposed
    /// to runtime failures. The CLI maps validation errors to exit code 2 and
    /// everything else to exit code 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput
                | Error::NonFinite
                | Error::InvalidTemperature(_)
                | Error::ShapeMismatch(_)
                | Error::LabelOutOfRange { .. }
                | Error::InvalidAlpha(_)
                | Error::InvalidFraction(_)
                | Error::InvalidPolicy(_)
                | Error::IdMismatch(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
