//! Error type shared across the simulator.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, model plumbing, data handling and the
/// unlearning pipeline.
#[derive(Debug)]
pub enum Error {
    /// Tensor/kernel shapes do not compose; the message names both shapes.
    Dimension(String),
    /// A class label fell outside `[0, num_classes)`.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// A byte stream did not match the expected file format.
    Format(String),
    /// Checkpoint or representation payload was written by an incompatible version.
    VersionMismatch { expected: u32, got: u32 },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Model spec does not describe a runnable network.
    InvalidModel(String),
    /// A prune plan would leave a layer without any kept channel.
    PruneCap(String),
    /// An operation needs at least one sample/contribution and got none.
    Empty(String),
    /// No participant observed the given class, so it cannot be aggregated.
    ClassUnobserved { class: usize },
    /// Bad experiment or FL configuration.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::VersionMismatch { expected, got } => {
                write!(f, "version mismatch: expected {expected}, got {got}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::InvalidModel(msg) => write!(f, "invalid model: {msg}"),
            Error::PruneCap(msg) => write!(f, "prune cap violated: {msg}"),
            Error::Empty(msg) => write!(f, "empty input: {msg}"),
            Error::ClassUnobserved { class } => {
                write!(f, "class {class} was observed by no participant")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
