//! Experiment runner: configuration, the five run modes, seeded sweeps over
//! noise ratios and aggregation of finished runs.

mod config;
mod run;
mod sweep;

pub use config::{
    key_def, parse_config, parse_config_text, DatasetSpec, ExperimentConfig, KeyDef, Mode,
    TermChoice, KEYS, OUT_ENV,
};
pub use run::{
    execute, load_dataset, load_summary, prepare_data, prepare_data_with_stats, run_experiment, write_artifacts,
    RunArtifacts, RunSummary, CONFIG_FILE, EPOCHS_FILE, HISTORY_FILE, MODEL_FILE, SUMMARY_FILE,
};
pub use sweep::{
    aggregate, aggregate_csv, cell_dir, cells_csv, report, report_from, sweep, Aggregate, Report,
    SweepCell, ACCURACY_FILE, ACCURACY_SUMMARY_FILE,
};
