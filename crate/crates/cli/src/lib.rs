//! Command-line front end: data files, configuration and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
