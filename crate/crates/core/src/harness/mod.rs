//! Experiment harness: configs, grid runs, tables and deviation estimates.

pub mod config;
pub mod deviation;
pub mod experiment;
pub mod table;

pub use config::{load_config, Algorithm, ExperimentConfig, ProblemConfig, ScheduleMode};
pub use deviation::{estimate_deviation_prob, DeviationReport};
pub use experiment::{build_instance, run_experiment, solve_once, CellResult, Instance, SolutionReport};
pub use table::{emit_table, TableFormat};
