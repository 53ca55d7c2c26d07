//! Experiment front end: configuration, seed repetitions, the ablation grid
//! and the verification suite.

pub mod config;
pub mod error;
pub mod runner;
pub mod stats;
pub mod verify;

pub use config::{DatasetSpec, ExperimentConfig};
pub use error::{exit_code, one_line, Failure};
