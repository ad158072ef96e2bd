//! Evaluation engine: confusion matrices, per-class and weighted
//! precision/recall/F1, ROC curves with AUC, and the per-tumor-type
//! aggregation of binary-task accuracies.
//!
//! Everything here is a pure function of its inputs.

mod aggregate;
mod confusion;
mod report;
mod roc;

pub use aggregate::{tumor_type_aggregate, TumorTypeAccuracy};
pub use confusion::{confusion, ConfusionMatrix};
pub use report::{report, Averages, ClassMetrics, DegenerateMetric, EvaluationRecord, MetricReport};
pub use roc::{roc, RocCurve, RocPoint};

pub const METRICS_FILE_NAME: &str = "metrics.json";
pub const CONFUSION_FILE_NAME: &str = "confusion.csv";
pub const ROC_FILE_NAME: &str = "roc.csv";
