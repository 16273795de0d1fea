//! Experiment orchestration: configuration, training runs, artifacts and
//! reports.

mod artifact;
mod config;
mod report;
mod run;
mod train;

pub use artifact::{parse_artifact, read_artifact, read_artifacts, render, write_artifact};
pub use config::{
    ArchConfig, ArchKind, BlobsConfig, DataConfig, DatasetKind, ExperimentConfig, Method,
};
pub use report::{
    emit_report, ReportFiles, CUMULATIVE_F1_CSV, CUMULATIVE_HEADER, MANIFEST_JSON, METRICS_CSV,
    METRICS_HEADER, OPENNESS_F1_CSV, OPENNESS_HEADER, SUMMARY_CSV, SUMMARY_STATS_CSV,
};
pub use run::{
    load_data, run_experiment, run_experiment_with, run_once, sweep_openness, sweep_openness_with,
    threshold_coverage, OpennessRow, RunArtifact,
};
pub use train::{train_model, TraceEntry, TraceLoss, TrainSettings};
