//! File formats, experiment orchestration and reporting around
//! `siamese-core`.

pub mod config;
pub mod experiment;
pub mod manifest;
pub mod report;
pub mod synthetic;
pub mod weights;

pub use config::{
    parse_config, parse_config_str, ExperimentConfig, Init, Mode, Technique, TrainSettings,
};
pub use experiment::{
    run_experiment, run_scaling_study, run_single_cnn, RawRow, ResultTable, RunOutput,
};
pub use manifest::load_manifest;
pub use report::{emit_report, replay, Command};
pub use weights::{export_weights, import_weights};
