//! Library surface of the experiment driver; the `recon` binary is a thin
//! wrapper over [`commands`].

pub mod commands;
pub mod config;

use recon_core::error::Error;

/// Process exit code for an error: 2 config, 3 numeric, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Dimension(_) | Error::UnsupportedSize(_) | Error::Contract(_) => {
            2
        }
        Error::Numeric(_) | Error::Coverage { .. } | Error::Diverged(_) => 3,
        Error::Io(_) | Error::Format(_) => 4,
    }
}
