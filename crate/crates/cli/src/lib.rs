//! Experiment driver for symplectic recurrent networks: dataset generation,
//! training, evaluation and comparison reports.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::{ExperimentConfig, ModelKind, Preset, ReboundKind};
pub use metrics::EvalReport;
