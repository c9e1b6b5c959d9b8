//! Library side of the `hsmg` binary: configuration and subcommands.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;

/// Worker threads from `HSMG_THREADS`, defaulting to 1.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("HSMG_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::config(format!(
                "HSMG_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}
