use std::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A value fell outside an operation's domain (log of a non-positive
    /// number, division by zero, and so on).
    Domain { op: &'static str, detail: String },
    /// A tensor held or produced a NaN/Inf where finite values are required.
    NonFinite { op: &'static str },
    /// An input was degenerate in a way the operation cannot handle
    /// (e.g. a feature point coinciding with the reference direction).
    Degenerate { op: &'static str, detail: String },
    /// Invalid configuration value.
    Config(String),
    /// A gradient became NaN during an optimizer step.
    NanGradient { param: String },
    /// Checkpoint file is malformed or of an unexpected version/dtype.
    Checkpoint(String),
    /// Underlying I/O failure.
    Io(String),
    /// Unsupported image file format.
    UnsupportedFormat(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch, lhs={lhs:?} rhs={rhs:?}")
            }
            Self::Domain { op, detail } => write!(f, "{op}: domain error: {detail}"),
            Self::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Self::Degenerate { op, detail } => write!(f, "{op}: degenerate input: {detail}"),
            Self::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Self::NanGradient { param } => {
                write!(f, "NaN gradient for parameter `{param}`; aborting")
            }
            Self::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Self::Io(msg) => write!(f, "I/O error: {msg}"),
            Self::UnsupportedFormat(msg) => write!(f, "unsupported format: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
