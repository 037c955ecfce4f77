//! File formats, experiment configuration and the command implementations
//! behind the `duet-lab` binary.

pub mod checkpoint;
pub mod cifar;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod idx;
pub mod synth;

pub use config::RunConfig;
pub use error::{LabError, LabResult};
