//! Command-line front end for cooperative ISAC localization experiments.

pub mod args;
pub mod commands;
pub mod output;
pub mod scenario;
