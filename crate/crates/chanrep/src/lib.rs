//! Harness around `chanrep-core`: configuration, file formats, the
//! gen/train/eval pipeline, oracle verification suites and the CLI glue.

pub mod config;
pub mod error;
pub mod eval;
pub mod formats;
pub mod pipeline;
pub mod project;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
