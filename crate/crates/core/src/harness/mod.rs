//! Experiment driver: configuration, seeded end-to-end runs, pretraining,
//! sweeps, and CSV reports.

mod commands;
mod config;
mod data;
mod gradcheck;
mod report;
mod run;

pub use commands::{
    cmd_eval, cmd_gen_data, cmd_pretrain, cmd_report, cmd_sweep, cmd_train, load_artifact, load_pretrained,
    read_meta, run_experiment, save_training, sidecar_path, sweep, ArtifactMeta, EvalSplit, SweepAxis, SweepRow,
};
pub use config::{
    ConditionConfig, CsvPaths, DataConfig, DataSource, ExperimentConfig, HierarchySection, Method, ModelConfig,
    PretrainConfig,
};
pub use data::{load_raw, prepare, write_dataset, PreparedData};
pub use gradcheck::{grad_check_suite, GradCheckCase, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE};
pub use report::{
    build_report, write_partitions, write_report, write_threshold_log, write_training_log, AggregateRow,
    MetricsReport, PredictionRow, TaskRow, YearRow,
};
pub use run::{evaluate, initial_model, pretrain, train, Artifact, LogRow, PretrainOutcome, RouteInfo, TaskResult, TrainOutcome};
