//! Experiment runner: configuration files, evaluation campaigns over the
//! planners, training runs and plot-ready series.

pub mod config;
mod error;
pub mod eval;
pub mod inspect;
pub mod plot;
pub mod stats;
pub mod train;

pub use config::{ConfigFile, ExperimentConfig, Planner, TrainConfig};
pub use error::{HarnessError, Result};
pub use eval::{run_eval, EvalReport, MetricRow};
pub use inspect::inspect_map;
pub use plot::emit_plot_data;
pub use train::run_train;
