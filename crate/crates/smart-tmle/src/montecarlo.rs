//! Parallel Monte Carlo driver. Every replicate owns its random streams, so
//! the report does not depend on the number of worker threads.

use rayon::prelude::*;
use smart_tmle_core::sim::{fixed_truth, run_replicate, summarize, McReport, McSettings, ReplicateFailure, SimError};

/// Run a study on `jobs` worker threads (`0` picks the number of CPUs).
pub fn run_parallel(settings: &McSettings, jobs: usize) -> Result<McReport, SimError> {
    settings.validate()?;
    let config = settings.resolved_config();
    config.validate().map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let truth = fixed_truth(settings)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SimError::InvalidSpec(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        (0..settings.reps)
            .into_par_iter()
            .map(|r| {
                run_replicate(settings, &config, r).map_err(|e| ReplicateFailure { replicate: r, message: e.to_string() })
            })
            .collect::<Vec<_>>()
    });
    summarize(settings, truth, outcomes)
}
