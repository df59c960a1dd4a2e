//! Library side of the command-line harness: configuration, calibration
//! bundles, the paired evaluation machinery, and embedded reference results.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod harness;
pub mod refdata;

use rankdp_core::error::Error;

/// Process exit code for an error: 2 for configuration and input problems,
/// 3 for solver non-convergence, 4 for i/o failures.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::IoFailure { .. } => 4,
        Error::NonConvergence { .. } => 3,
        _ => 2,
    }
}
