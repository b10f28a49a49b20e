//! Experiment harness: configs, simulated plants, the closed loop, logs,
//! the gradient-region map and latency benchmarks.

pub mod bench;
pub mod closed_loop;
pub mod config;
pub mod gradient_map;
pub mod logs;
pub mod plant;

pub use bench::{bench, BenchReport};
pub use closed_loop::{run_closed_loop, run_experiment, ResidualSnapshot};
pub use config::{ExperimentConfig, ExperimentKind, RunMode, OUT_DIR_ENV};
pub use gradient_map::{gradient_map, GradientMap, MapSummary, Region};
pub use logs::{residual_checksum, RunRecord, Summary};
pub use plant::{Plant, PlantStep, Setup, Task};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Plant(String),
    #[error("i/o error: {0}")]
    Io(String),
}
