//! The experiment matrix: configuration, the prepare/run/report stages and
//! the on-disk results layout.
//!
//! ```text
//! <results_dir>/manifest.csv
//! <results_dir>/split.json
//! <results_dir>/<task>__<backbone>__seed<k>/{run.json, history.csv, checkpoint.safetensors,
//!                                           metrics.json, confusion.csv, roc.csv, plots/}
//! <results_dir>/report/
//! ```

mod inspect;
mod plan;
mod plots;
mod report;
mod runner;

pub use inspect::inspect;
pub use plan::{
    run_id, DatasetSection, ExperimentPlan, ModelSpec, RunSpec, SplitSection, WeightsSection, RESULTS_DIR_ENV,
};
pub use plots::{accuracy_bars, history_plot, roc_plot};
pub use report::{
    build_report, discover_runs, load_run, reference, write_report, AggregateRow, ComparisonRow, ExperimentReport,
    ModelKey, PerClassRow, ReportGrid, StoredRun, TaskRow, REPORT_DIR_NAME,
};
pub use runner::{
    is_complete, load_prepared, prepare, run_matrix, PrepareSummary, RunOptions, RunOutcome, RunSummary,
    PLOTS_DIR_NAME,
};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Exit status for an error that stopped a command outright.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Training(_) | Error::Prediction(_) | Error::Plot(_) => EXIT_PARTIAL,
        _ => EXIT_CONFIG,
    }
}
