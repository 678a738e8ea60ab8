//! Experiment driver: configuration, artifact plumbing, metrics and images
//! around the `pisd-core` pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod image;
pub mod ini;
pub mod metrics;
pub mod observe;

use std::path::Path;

use rand::RngCore;

pub use config::{ExperimentConfig, Problem, SampleConfig};
pub use error::{CliError, CliResult};

pub(crate) const STREAM_TRAIN: u64 = 1;
pub(crate) const STREAM_NOISE: u64 = 2;
pub(crate) const STREAM_OBSERVATIONS: u64 = 3;

/// Independent seed for one consumer of the top-level seed. Streams live far
/// above the per-sample streams used by data generation.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    pisd_core::datagen::sample_rng(seed, (1 << 48) + stream).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    GenerateData,
    FitCodec,
    Train,
    Sample,
    Evaluate,
    Report,
}

/// Executes one verb; `only` restricts sample/evaluate/report to one label.
pub fn run(
    verb: Verb,
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    only: Option<&str>,
) -> CliResult<()> {
    let cfg = ExperimentConfig::load(config, seed, out)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    match verb {
        Verb::GenerateData => commands::generate_data(&cfg).map(drop),
        Verb::FitCodec => commands::fit_codec(&cfg).map(drop),
        Verb::Train => commands::train_model(&cfg, out).map(drop),
        Verb::Sample => commands::sample_runs(&cfg, out, only).map(drop),
        Verb::Evaluate => commands::evaluate(&cfg, out, only).map(drop),
        Verb::Report => commands::report(&cfg, out, only).map(drop),
    }
}
