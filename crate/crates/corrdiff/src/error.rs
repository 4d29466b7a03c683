//! Error types shared across the codec.

use std::fmt;

/// Typed failures raised while parsing or validating a wire stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    /// Stream does not start with the expected magic bytes.
    BadMagic,
    /// Stream version byte is not one this build understands.
    UnsupportedVersion(u8),
    /// A checksum over the payload did not match the stored value.
    ChecksumMismatch { stored: u32, computed: u32 },
    /// Fewer bytes were available than a field required.
    Truncated { needed: usize, available: usize },
    /// Structurally valid bytes with an inconsistent field value.
    Malformed(String),
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic => write!(f, "bad magic bytes"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported stream version {v}"),
            Self::ChecksumMismatch { stored, computed } => {
                write!(f, "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            Self::Truncated { needed, available } => {
                write!(f, "truncated input: needed {needed} bytes, had {available}")
            }
            Self::Malformed(msg) => write!(f, "malformed stream: {msg}"),
        }
    }
}

/// Crate-wide error type.
///
/// The variants map onto the CLI exit-code buckets: configuration, dimension,
/// format and I/O problems exit with 2, protocol violations with 3, and
/// numeric failures with 4.
#[derive(Debug)]
pub enum Error {
    /// Invalid or unsupported configuration (unknown schedule kind, bad search bounds, ...).
    Config(String),
    /// Tensor shapes do not agree.
    Dimension { expected: String, got: String },
    /// Non-finite values or arithmetic guards (division by sigma(0), overflow, ...).
    Numeric(String),
    /// Wire-format violation.
    Protocol(ProtocolError),
    /// File-format violation (tensor files, weight files, CSV inputs).
    Format(String),
    Io(std::io::Error),
}

impl Error {
    pub fn dimension(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Self::Dimension { expected: expected.into(), got: got.into() }
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self, Self::Protocol(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "configuration error: {msg}"),
            Self::Dimension { expected, got } => {
                write!(f, "dimension error: expected {expected}, got {got}")
            }
            Self::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Self::Protocol(e) => write!(f, "protocol error: {e}"),
            Self::Format(msg) => write!(f, "format error: {msg}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<ProtocolError> for Error {
    fn from(e: ProtocolError) -> Self {
        Self::Protocol(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
