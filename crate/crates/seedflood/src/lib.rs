//! File formats and experiment orchestration for `seedflood-core`: JSON
//! experiment files, edge lists, and the CSV/JSON result files written by the
//! `seedflood` command.

pub mod config;
pub mod edges;
pub mod output;

pub use config::{ConfigError, ExperimentSpec, Location, Overrides, Variant};
pub use output::{execute, ExecutionReport, OutputError, Status};
