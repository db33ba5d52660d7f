//! Experiment orchestration behind the command-line tool.

pub mod config;
pub mod emit;
pub mod experiments;
pub mod simulate;

pub use config::{ExperimentConfig, VariationWeight};
pub use emit::Provenance;
pub use experiments::{
    run_distribution_experiment, run_rate_experiment, run_variation_experiment, DistributionReport, RateReport,
    VariationReport,
};
pub use simulate::{simulate, Simulation};
