//! Experiment configuration, the seeded training loop, evaluation and
//! metrics outputs.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{ConfigError, EnvConfig, ExperimentConfig, SamplerKind, ScorerConfig};
pub use metrics::{aggregate, MetricsRow, RunSummary};
pub use run::{evaluate, evaluate_policy, run_experiment, run_seed, ExperimentOutcome, SeedOutcome};

use crate::gridworld::EnvError;
use crate::replay::ReplayError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("replay: {0}")]
    Replay(#[from] ReplayError),
    #[error("seed runs report different evaluation steps: {0}")]
    MisalignedSteps(String),
    #[error("malformed file: {0}")]
    Format(String),
}
