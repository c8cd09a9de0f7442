//! Experiment configuration, random instances, certification runs and result files.

pub mod config;
pub mod experiments;
pub mod generator;
pub mod instance;
pub mod output;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat, SCHEMA_VERSION};
pub use experiments::{
    forage_specs, replay, run_experiment, write_outputs, ExperimentOutcome, ReplayOutcome,
    Violation,
};
pub use generator::{generate_linear_instance, GeneratorParams, InstanceGenerator, IntRange};
pub use instance::{BoundInstance, BoundKind};
pub use output::{determinism_hash, emit_results, ResultRow, COLUMNS};
