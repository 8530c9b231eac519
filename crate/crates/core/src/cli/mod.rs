//! Config-driven front end of the `rkl` binary.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_with_overrides, Command, ConfigError, ExperimentKind, RunConfig, SurfaceSpec};
pub use run::{execute, run, CliError, Outcome, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};
