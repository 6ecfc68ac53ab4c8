//! Library surface of the `srlc` command-line workbench: experiment
//! configuration, the train/eval/statefit commands, and the verification
//! suite. The binary in `main.rs` is a thin argument-parsing shell over
//! this, so integration tests drive the same code paths.

pub mod commands;
pub mod config;
pub mod verify;

pub use commands::{cmd_eval, cmd_statefit, cmd_train, EvalMode};
pub use config::ExperimentConfig;
