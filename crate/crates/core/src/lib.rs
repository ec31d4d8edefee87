//! Program repair with historical context: history mining, heuristic
//! context, prompt rendering, inference, sandboxed evaluation, metrics,
//! statistics and cost simulation.

pub mod context;
pub mod cost;
pub mod dataset;
pub mod diff;
pub mod forge;
pub mod gateway;
pub mod git;
pub mod harness;
pub mod history;
pub mod method;
pub mod metrics;
pub mod mine;
pub mod prompt;
pub mod python;
pub mod report;
pub mod stats;
pub mod tokenizer;
