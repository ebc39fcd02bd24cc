//! Experiment harness: config parsing, grid execution and metrics files.

mod grid;
mod runner;

pub use grid::*;
pub use runner::*;
