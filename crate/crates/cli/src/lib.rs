//! Front end for the URA feedback simulator: configuration files, presets,
//! grids and result files.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Group, Settings};
pub use error::{CliError, Result};
pub use run::{run, RunManifest, RunReport};
