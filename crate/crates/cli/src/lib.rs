//! Command-line front end: reproducible generate/train/track/eval runs over
//! the tracking engine, with provenance-stamped artifacts.

pub mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_gen, cmd_track, cmd_train, CommandOutcome};
pub use config::RunConfig;
