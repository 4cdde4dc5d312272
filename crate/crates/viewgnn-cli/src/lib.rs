//! Library behind the `viewgnn` binary: config parsing/validation and the
//! subcommand implementations, exposed so tests can drive them directly.

pub mod commands;
pub mod config;

pub use commands::{best_alpha, dispatch, run_command, CommandKind, ALPHA_GRID};
pub use config::{
    apply_overrides, parse_and_validate, DatasetSpec, EnsembleConfig, Overrides, PathsSpec,
    RunConfig, SynthSpec,
};
