//! Command-line front end: law and experiment files, the subcommands and
//! their artifacts.

pub mod cli;
pub mod commands;
pub mod config;
pub mod lawfile;
pub mod output;

pub use cli::{run, Cli};
pub use commands::Outcome;
