//! Command-line driver: `synth`, `invert`, `ntk` and `metrics`, each reading
//! one TOML config and writing its artifacts plus a `manifest.json` to an
//! output directory.

pub mod config;
pub mod error;
pub mod output;
pub mod plots;
pub mod run;
pub mod setup;

pub use error::{CliError, CliResult};
pub use output::RunManifest;
pub use run::{run, Command, Outcome, RunArgs};
