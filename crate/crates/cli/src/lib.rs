//! Experiment harness around `oprpf`: configuration, price ingestion and
//! metric output.

pub mod data;
pub mod error;
pub mod experiment;

pub use data::{load_prices, log_returns, PriceSeries};
pub use error::CliError;
pub use experiment::{params_path, run_experiment, write_outputs, Experiment, ExperimentConfig, Outcome};
