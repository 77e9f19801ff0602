//! Experiment configuration, execution and plotting.

mod config;
mod plot;
mod run;

pub use config::{
    sambo_train_defaults, toy_train_defaults, ExperimentConfig, ExperimentKind,
    ExperimentSection, SamboSection, ToyConfig, OUTPUT_DIR_ENV,
};
pub use plot::{plot, render_svg};
pub use run::{
    curve_to_csv, read_curve_csv, run_cells, run_experiment, summarize, CellResult,
    ModeSummary, RunSummary, Stat, CSV_COLUMNS,
};
