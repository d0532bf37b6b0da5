//! Config-driven experiments: load, split, train, evaluate, persist.

pub mod checkpoint;
pub mod config;
mod experiment;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{DataConfig, DataFormat, EvalConfig, ExperimentConfig, ModelConfig, ModelName, TrainConfig};
pub use experiment::*;
