//! Command implementations behind the `driftless` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, Result};

/// Environment variable capping the worker threads used for inference.
pub const THREADS_ENV: &str = "DRIFTLESS_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
