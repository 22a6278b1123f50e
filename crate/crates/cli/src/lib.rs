//! Command-line front end: configuration, subcommands and run manifests.

pub mod commands;
pub mod config;
pub mod manifest;
