//! Configuration, staged workflow and run manifest behind the `pmstab`
//! command.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{load, LoadedConfig, Overrides, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::{verify_manifest, Stage, Workspace};
