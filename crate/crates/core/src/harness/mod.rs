//! Configuration, metric files, presets, accuracy evaluation and the CLI.

mod cli;
mod config;
mod eval;
mod metrics;
mod presets;
mod runner;

pub use cli::{cli_main, default_out_dir, OUT_DIR_ENV};
pub use config::{BaselineSettings, DatasetSource, Method, PenaltyWeights, RunConfig, TauSpec};
pub use eval::evaluate_accuracy;
pub use metrics::{
    read_metrics, read_summary, save_summary, write_summary, write_timing, MetricEvent, RecordingSink, SummaryRow,
    SUMMARY_HEADER,
};
pub use presets::{
    asymptotic_check, desk_base, local_steps_desk, preset, quick, rate_check, table1_desk, table1_full, HETEROGENEITY,
    METHODS, PRESETS,
};
pub use runner::{
    execute, execute_all, load_dataset, prepare, quadratic_instance, write_partition, write_shard_csv, Instance,
    PersistedModel, QuadraticInstance, RunOutput,
};
