//! Config-driven experiment runner.

mod config;
mod runner;

pub use config::{read_pairs, DatasetKind, DatasetSpec, EpsilonUnits, Precision, RunConfig};
pub use runner::{
    build_data, compare_schemes, comparison_text, mean_sd, metadata_text, resolve_epsilon, run_experiment, run_seeds,
    summary_text, ExperimentResult, SeedRun,
};
