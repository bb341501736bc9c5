//! Experiment orchestration: config validation, seeded replication and the
//! on-disk run layout.
//!
//! A run writes into `<output_dir>/<hash>/`:
//!
//! | file | contents |
//! |---|---|
//! | `results.csv` | one row per replication (or per `n` / formula, by kind) |
//! | `summary.json` | fits and aggregate statistics, no timestamps |
//! | `config.resolved.json` | the config with every default filled in |
//! | `laws/*.csv` | limit experiments only: one sampled law per file |
//!
//! Every number in these files is a function of the config alone, whatever
//! the worker count.

mod config;
mod run;

pub use config::{
    validate_config, validate_value, Diagnostic, DistributionSpec, ExperimentConfig, ExperimentKind, GridSpec,
    Problem,
};
pub use run::{
    config_hash, fmt_float, read_results, replication_csv, run_experiment, stored_config, RunOptions, RunRecord,
    DEFAULT_RATES_KAPPA,
};
