//! Command-line pipeline around `masc-core`: run configuration, binary file
//! formats, training and evaluation commands and report emission.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;

pub use config::{Accel, RunConfig};
pub use error::{CliError, Result};
