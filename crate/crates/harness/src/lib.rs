//! Experiment harness behind the `banditlab` command: configuration,
//! multi-seed execution with a bounded worker pool, regret aggregation,
//! hyperparameter sweeps and file output.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{AlgoSpec, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult};
