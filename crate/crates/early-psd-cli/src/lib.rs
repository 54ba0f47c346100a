//! Experiment harness for the early-PSD estimators: config-driven runners
//! reproducing the model-based sweeps and the acoustic pipeline, emitting
//! machine-readable CSV tables.

pub mod acoustic;
pub mod config;
pub mod model;
pub mod rows;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("computation failed: {0}")]
    Compute(String),
}

impl From<early_psd::Error> for CliError {
    fn from(e: early_psd::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

/// Deterministic per-work-item RNG: one base seed, one ChaCha stream per
/// item, independent of thread scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f` inside a rayon pool of the requested size (0 means all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Compute(e.to_string()))?;
    Ok(pool.install(f))
}
