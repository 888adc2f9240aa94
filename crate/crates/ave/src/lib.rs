//! File formats, provider backends and the `ave` command line around
//! `ave-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod formats;
pub mod http;
pub mod reports;
pub mod rundir;
