//! File formats, checkpoints, run manifests, dataset descriptions and the
//! `sit` command-line tool built on `sit-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod export;
pub mod format;
pub mod manifest;
pub mod metrics;

pub use error::{Error, Result};
