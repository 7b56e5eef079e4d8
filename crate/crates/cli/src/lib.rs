//! Command-line front end for `matchnet`: TOML experiment configs and
//! subcommands that print CSV.

pub mod commands;
pub mod config;
