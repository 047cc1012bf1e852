//! Command-line driver for the screening pipeline.
//!
//! Stages communicate only through files in a working directory, so any
//! stage can be rerun on its own once its inputs exist.

pub mod config;
pub mod error;
pub mod stages;

pub use config::{PipelineConfig, Stage};
pub use error::CliError;
pub use stages::{Pipeline, PipelineReport};
