//! Experiment orchestration: configuration, staged pipeline with cached
//! intermediates, and JSON/CSV report output.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod sweep;

pub use config::{CorrespondenceSpec, ExperimentConfig, ManifoldSpec, SampleCounts, Seeds, Stage, SweepSpec};
pub use pipeline::{run, stage_closure, ExperimentReport, RunOutput, StageRecord, StageStatus, Timings};
pub use sweep::{run_sweep, SweepOutput, SweepReport, TrendPoint};
