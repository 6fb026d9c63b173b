//! Configuration-driven experiment runner around `dcl-core`: coupling-
//! multiplier sweeps, batch-size and convergence training comparisons,
//! gradient verification, and loss comparison tables, all serialized as CSV
//! plus a hashed manifest.

pub mod config;
pub mod experiment;
pub mod manifest;

pub use config::{parse_config, serialize_config, ConfigError, ExperimentConfig, ExperimentKind};
pub use experiment::{resolve_output_dir, run_experiment, RunError};
pub use manifest::{ExperimentManifest, RunStatus};
