//! Batch pipeline over a shared run configuration.

pub mod commands;
pub mod config;
