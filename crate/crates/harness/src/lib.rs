//! Experiment driver for subspace-stitched metric recovery: TOML sweep
//! configs, parallel deterministic runs, CSV / JSON-lines results, and
//! versioned scenario, fit and estimate files.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod files;
pub mod output;

pub use config::{Cell, ExperimentId, ExperimentSpec, ModelSpec, OutputFormat, StitchKind};
pub use error::{HarnessError, Result};
pub use experiment::{
    relative_error, run_experiment, run_experiment1, run_experiment2, run_experiment3, run_misspec,
    CellSummary, Diagnostics, ExperimentOutput, ResultRow,
};

/// Runs `f` on a rayon pool with `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(HarnessError::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
