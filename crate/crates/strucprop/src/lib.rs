//! File formats, run configuration and pipeline drivers on top of
//! `strucprop-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::{Error, Result};
