//! Workflows behind the `ingarch` binary: simulate, fit, predict, moments
//! and verify, each driven by a [`RunConfig`].
//!
//! Exit codes: 0 success, 1 input or data error, 2 optimization failure
//! (including a fit that stopped before converging), 3 a verification
//! check failed.

pub mod commands;
pub mod config;

pub use commands::{cmd_fit, cmd_moments, cmd_predict, cmd_simulate, cmd_verify};
pub use config::RunConfig;

pub const EXIT_DATA: i32 = 1;
pub const EXIT_OPTIMIZATION: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let optimization =
        err.chain().any(|e| matches!(e.downcast_ref::<ingarch::Error>(), Some(ingarch::Error::OptimizationFailed(_))));
    if optimization {
        EXIT_OPTIMIZATION
    } else {
        EXIT_DATA
    }
}
