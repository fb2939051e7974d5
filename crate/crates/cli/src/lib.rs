//! Experiment harness: configuration, CSV persistence, sweeps over the
//! relaxation weight, SVG plots and the property validation suite.

pub mod config;
pub mod output;
pub mod plot;
pub mod sweep;
pub mod validate;

pub use config::{Algorithm, EnvSpec, ExperimentConfig, KvConfig, SEED_ENV};
pub use plot::emit_plot;
pub use sweep::{recompute_summary, run_sweep, RunSummary, SummaryRow, SweepOptions};
pub use validate::{validate_suite, Report, SuiteOptions};
