//! Library surface of the `corrdiff` binary, split out so the integration
//! tests can drive the same code paths the executable runs.

pub mod bdrate;
pub mod commands;
pub mod pipeline;
pub mod verify;

use corrdiff::error::Error;

/// Exit-code buckets: 0 ok, 2 format/configuration/io, 3 protocol, 4 numeric.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Protocol(_) => 3,
        Error::Numeric(_) => 4,
        Error::Config(_) | Error::Dimension { .. } | Error::Format(_) | Error::Io(_) => 2,
    }
}
