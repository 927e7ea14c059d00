//! Runner for debiasing prompt-tuning experiments: configuration, file
//! formats, checkpoints, reports and plots around `ptdebias-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod plot;
pub mod report;
pub mod score;

pub use error::{Result, RunnerError};
