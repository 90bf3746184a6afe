//! Experiment harness: scenario configs, the run pipeline, CSV artifacts,
//! plot-script generation, and invariant checks over completed runs.

pub mod config;
pub mod csv;
pub mod plot;
pub mod runner;
