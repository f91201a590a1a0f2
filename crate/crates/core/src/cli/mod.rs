//! Experiment configuration, presets and the subcommands behind the binary.

pub mod commands;
pub mod config;
pub mod presets;

pub use commands::{cmd_oracle, cmd_reproduce, cmd_run, cmd_synth, run_trials, Overrides, RunReport, SynthArgs};
pub use config::{ExperimentConfig, Source, TopologySpec};
