//! File formats, experiment harness and command-line tool around
//! [`adverin_core`].

pub mod cli;
pub mod config;
pub mod experiment;
pub mod report;
pub mod store;

/// Invalid flags or settings; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Process exit status for an error returned by [`cli::run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<UsageError>().is_some()) {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}
