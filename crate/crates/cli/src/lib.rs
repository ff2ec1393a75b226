//! Command line driver for the inbox simulations.
//!
//! Subcommands map onto [`commands`] and [`selftest`]; configuration lives
//! in [`config`] and file formats in [`output`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
pub mod selftest;

pub use cli::{run, Cli};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const TEST_FAILURE: i32 = 1;
    pub const PARAMETER_ERROR: i32 = 2;
}
