//! Command implementations and the HTTP service behind the `mrinterp`
//! binary.

pub mod commands;
pub mod image;
pub mod serve;

use mrinterp::Error;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Coefficients(_) => 2,
        Error::Diverged { .. } => 4,
        _ => 3,
    }
}
