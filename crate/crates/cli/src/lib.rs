//! Library side of the `ess-lab` binary: configuration, the
//! generate/train/eval/report pipeline and the walkthrough service.

pub mod config;
pub mod pipeline;
pub mod server;
pub mod session;
pub mod stats;

use std::fmt;

pub use config::RunConfig;

/// Exit status 1: bad input, configuration or files.
pub const EXIT_USER: i32 = 1;
/// Exit status 2: an internal invariant was violated.
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(ess_core::Error),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ess_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
            CliError::Core(e) => match e {
                E::Tensor(_) | E::NonFiniteLoss { .. } | E::EmptyQueue | E::NoPositives => EXIT_INTERNAL,
                _ => EXIT_USER,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ess_core::Error> for CliError {
    fn from(e: ess_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
