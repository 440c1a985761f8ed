//! Experiment runner: configuration, the staged training pipeline, sweeps
//! over BER and bandwidth, statistics and CSV reports.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod sweep;

pub use config::{ExperimentConfig, HarqSettings, BaselineSettings, SweepGrid};
pub use pipeline::{TrainedModels, Workspace};
pub use stats::{interpolate_surface, pearson, quantile, SurfacePoint};
