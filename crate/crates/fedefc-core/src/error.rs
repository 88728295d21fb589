//! Error types shared across the simulator.
//!
//! One enum per failure domain keeps match arms exhaustive at the CLI boundary
//! while letting library callers pattern-match on the cases they can recover
//! from (e.g. [`Error::EmptyCountMatrix`] downgrades to plain loss inside the
//! engine instead of aborting the round).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A class label outside `[0, num_classes)`.
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    /// An operation that requires at least one element received none.
    #[error("empty input in {0}")]
    EmptyInput(&'static str),

    /// A scalar parameter violated its documented range or a gradient went
    /// non-finite.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// No example on the client qualified for any count-matrix cell, so no
    /// transition estimate exists; the engine falls back to the uncorrected
    /// loss for that client and round.
    #[error("count matrix has no counted examples")]
    EmptyCountMatrix,

    /// Cosine similarity is undefined when either operand has zero norm.
    #[error("cosine similarity undefined for an all-zero matrix")]
    ZeroMatrix,

    /// The wrapped errors below embed their cause's text in their own
    /// `Display`, so they deliberately expose no `source()` — chain walkers
    /// (like the CLI's error printer) would otherwise report each line twice.
    #[error("config error: {0}")]
    Config(ConfigError),

    #[error("idx read error: {0}")]
    Idx(IdxError),

    /// A metrics CSV that does not follow the writer's schema.
    #[error("csv error in {path} line {line}: {message}")]
    CsvSchema {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(e)
    }
}

impl From<IdxError> for Error {
    fn from(e: IdxError) -> Self {
        Error::Idx(e)
    }
}

/// Configuration-file problem, carrying the offending line when one exists
/// (range violations on defaulted keys have no line to point at).
#[derive(Debug, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// IDX (MNIST binary) format failures, one variant per detectable defect so
/// tests can assert the loader never silently yields garbage.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file: {detail}")]
    Truncated { path: String, detail: String },

    #[error("{path}: malformed file: {detail}")]
    Malformed { path: String, detail: String },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
}
