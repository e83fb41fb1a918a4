//! Experiment harness: configuration, run directories, reports and benchmarks.

pub mod bench;
pub mod config;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, Overrides};
pub use report::ReportRow;
