//! One module per subcommand. Each `run` resolves its settings, does the
//! work and returns a summary that tests can inspect.

pub mod eval;
pub mod metrics;
pub mod report;
pub mod synth;
pub mod train;
pub mod verify;

use crate::error::{CliError, Result};

/// A local worker pool, so `--jobs` never touches the global one.
pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start worker threads: {}", e)))
}
