use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::plan::{run_id, ExperimentPlan};
use super::plots;
use super::runner::{best_effort, is_complete};
use crate::error::{Error, Result};
use crate::metrics::{tumor_type_aggregate, EvaluationRecord, RocCurve, TumorTypeAccuracy, METRICS_FILE_NAME, ROC_FILE_NAME};
use crate::model::Backbone;
use crate::task::TaskName;

pub const REPORT_DIR_NAME: &str = "report";

/// Published reference numbers the report sets results against.
pub mod reference {
    use crate::model::Backbone;
    use crate::task::TaskName;

    /// Multiclass weighted precision, recall, F1 and accuracy.
    pub fn multiclass(backbone: Backbone) -> [f64; 4] {
        match backbone {
            Backbone::VGG16 => [0.89, 0.88, 0.88, 0.883],
            Backbone::VGG19 => [0.94, 0.94, 0.94, 0.939],
            Backbone::ResNet50 => [0.22, 0.47, 0.30, 0.470],
            Backbone::InceptionV3 => [0.81, 0.78, 0.79, 0.783],
            Backbone::DenseNet201 => [0.61, 0.58, 0.56, 0.583],
            Backbone::NASNetLarge => [0.80, 0.79, 0.79, 0.791],
        }
    }

    /// VGG19 binary-task AUC.
    pub fn vgg19_auc(task: TaskName) -> Option<f64> {
        match task {
            TaskName::NtVsRest => Some(0.95),
            TaskName::NctVsNt => Some(0.96),
            TaskName::VtVsNt => Some(0.96),
            TaskName::NctVsVt => Some(0.92),
            TaskName::Multiclass => None,
        }
    }

    /// VGG19 tile accuracy per tumor type in percent, `(NT, NCT, VT)`.
    pub const VGG19_TUMOR_TYPE_PERCENT: (f64, f64, f64) = (95.45, 94.34, 94.26);
}

/// A column of the report: one backbone trained with one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ModelKey {
    pub backbone: Backbone,
    pub seed: u64,
}

/// Which cells the report is expected to fill.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportGrid {
    pub tasks: Vec<TaskName>,
    pub models: Vec<ModelKey>,
}

impl ReportGrid {
    pub fn from_plan(plan: &ExperimentPlan) -> Self {
        Self {
            tasks: plan.tasks.clone(),
            models: plan
                .models
                .iter()
                .map(|m| ModelKey {
                    backbone: m.backbone,
                    seed: plan.train.seed,
                })
                .collect(),
        }
    }

    /// Every task against every model found on disk.
    pub fn discovered(runs: &BTreeMap<String, StoredRun>) -> Self {
        let models: BTreeSet<ModelKey> = runs.values().map(|r| r.key).collect();
        Self {
            tasks: TaskName::ALL.to_vec(),
            models: models.into_iter().collect(),
        }
    }
}

/// A completed run as read back from its directory.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub key: ModelKey,
    pub evaluation: EvaluationRecord,
    pub roc: Option<RocCurve>,
}

fn parse_seed(run_id: &str) -> Option<u64> {
    run_id.rsplit_once("__seed").and_then(|(_, s)| s.parse().ok())
}

/// Reads one run directory; `None` if the run has not completed.
pub fn load_run(dir: &Path) -> Result<Option<StoredRun>> {
    if !is_complete(dir) {
        return Ok(None);
    }
    let evaluation = EvaluationRecord::load(&dir.join(METRICS_FILE_NAME))?;
    let seed = parse_seed(&evaluation.run_id)
        .ok_or_else(|| Error::Config(format!("{}: malformed run id {:?}", dir.display(), evaluation.run_id)))?;
    let roc_path = dir.join(ROC_FILE_NAME);
    let roc = match (evaluation.positive_class, evaluation.auc) {
        (Some(pos), Some(auc)) if roc_path.is_file() => Some(RocCurve::read_csv(&roc_path, pos, auc)?),
        _ => None,
    };
    Ok(Some(StoredRun {
        dir: dir.to_path_buf(),
        key: ModelKey {
            backbone: evaluation.backbone,
            seed,
        },
        evaluation,
        roc,
    }))
}

/// Every completed run under `results_dir`, keyed by run id.
pub fn discover_runs(results_dir: &Path) -> Result<BTreeMap<String, StoredRun>> {
    if !results_dir.is_dir() {
        return Err(Error::Config(format!("results directory {} does not exist", results_dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(results_dir).map_err(|e| Error::io(results_dir, e))? {
        let path = entry.map_err(|e| Error::io(results_dir, e))?.path();
        let hidden = path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if !path.is_dir() || hidden {
            continue;
        }
        if let Some(run) = load_run(&path)? {
            out.insert(run.evaluation.run_id.clone(), run);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub run_id: String,
    pub status: &'static str,
    pub weighted_precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub published_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRow {
    pub task: TaskName,
    pub model: String,
    pub run_id: String,
    pub status: &'static str,
    pub accuracy: Option<f64>,
    pub weighted_precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub auc: Option<f64>,
    pub published_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClassRow {
    pub task: TaskName,
    pub model: String,
    pub run_id: String,
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub model: String,
    pub status: &'static str,
    pub nt_percent: Option<f64>,
    pub nct_percent: Option<f64>,
    pub vt_percent: Option<f64>,
    /// Binary runs the aggregate still needs, `;`-separated.
    pub missing: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub grid: ReportGrid,
    pub comparison: Vec<ComparisonRow>,
    pub tasks: Vec<TaskRow>,
    pub per_class: Vec<PerClassRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Expected run ids without a completed run.
    pub missing: Vec<String>,
    runs: BTreeMap<String, StoredRun>,
}

const OK: &str = "ok";
const MISSING: &str = "missing";

impl ExperimentReport {
    pub fn populated_cells(&self) -> usize {
        self.tasks.iter().filter(|r| r.status == OK).count()
    }

    pub fn run(&self, run_id: &str) -> Option<&StoredRun> {
        self.runs.get(run_id)
    }
}

fn model_label(key: ModelKey, grid: &ReportGrid) -> String {
    let seeds: BTreeSet<u64> = grid.models.iter().filter(|m| m.backbone == key.backbone).map(|m| m.seed).collect();
    if seeds.len() > 1 {
        format!("{}@seed{}", key.backbone, key.seed)
    } else {
        key.backbone.to_string()
    }
}

/// Assembles every table from stored evaluation records; nothing is
/// recomputed from predictions.
pub fn build_report(runs: BTreeMap<String, StoredRun>, grid: ReportGrid) -> Result<ExperimentReport> {
    if runs.is_empty() {
        return Err(Error::Config("no completed runs to report on".into()));
    }
    let cell = |task: TaskName, key: ModelKey| {
        let id = run_id(task, key.backbone, key.seed);
        let run = runs.get(&id);
        (id, run)
    };
    let mut missing = Vec::new();
    let mut task_rows = Vec::new();
    let mut per_class = Vec::new();
    for &task in &grid.tasks {
        for &key in &grid.models {
            let (id, run) = cell(task, key);
            let model = model_label(key, &grid);
            let published_auc = if key.backbone == Backbone::VGG19 {
                reference::vgg19_auc(task)
            } else {
                None
            };
            let Some(run) = run else {
                missing.push(id.clone());
                task_rows.push(TaskRow {
                    task,
                    model,
                    run_id: id,
                    status: MISSING,
                    accuracy: None,
                    weighted_precision: None,
                    weighted_recall: None,
                    weighted_f1: None,
                    auc: None,
                    published_auc,
                });
                continue;
            };
            let r = &run.evaluation.report;
            for c in &r.per_class {
                per_class.push(PerClassRow {
                    task,
                    model: model.clone(),
                    run_id: id.clone(),
                    class: c.class.clone(),
                    precision: c.precision,
                    recall: c.recall,
                    f1: c.f1,
                    support: c.support,
                });
            }
            task_rows.push(TaskRow {
                task,
                model,
                run_id: id,
                status: OK,
                accuracy: Some(r.accuracy),
                weighted_precision: Some(r.weighted.precision),
                weighted_recall: Some(r.weighted.recall),
                weighted_f1: Some(r.weighted.f1),
                auc: run.evaluation.auc,
                published_auc,
            });
        }
    }

    let comparison = grid
        .models
        .iter()
        .map(|&key| {
            let (id, run) = cell(TaskName::Multiclass, key);
            let r = run.map(|run| &run.evaluation.report);
            ComparisonRow {
                model: model_label(key, &grid),
                run_id: id,
                status: if r.is_some() { OK } else { MISSING },
                weighted_precision: r.map(|r| r.weighted.precision),
                weighted_recall: r.map(|r| r.weighted.recall),
                weighted_f1: r.map(|r| r.weighted.f1),
                accuracy: r.map(|r| r.accuracy),
                published_accuracy: reference::multiclass(key.backbone)[3],
            }
        })
        .collect();

    let aggregates = grid
        .models
        .iter()
        .map(|&key| {
            let mut accs = BTreeMap::new();
            let mut absent = Vec::new();
            for task in TaskName::BINARY {
                match cell(task, key) {
                    (_, Some(run)) => {
                        accs.insert(task, run.evaluation.report.accuracy);
                    }
                    (id, None) => absent.push(id),
                }
            }
            let agg: Option<TumorTypeAccuracy> = tumor_type_aggregate(&accs).ok();
            let pct = agg.map(|a| a.percent());
            AggregateRow {
                model: model_label(key, &grid),
                status: if agg.is_some() { OK } else { MISSING },
                nt_percent: pct.map(|p| p.0),
                nct_percent: pct.map(|p| p.1),
                vt_percent: pct.map(|p| p.2),
                missing: absent.join(";"),
            }
        })
        .collect();

    Ok(ExperimentReport {
        grid,
        comparison,
        tasks: task_rows,
        per_class,
        aggregates,
        missing,
        runs,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV tables, the text rendering and the charts into `out_dir`.
/// Returns the files written.
pub fn write_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut table = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = out_dir.join(name);
        f(&path)?;
        written.push(path);
        Ok(())
    };
    table("backbone_comparison.csv", &|p| write_csv(p, &report.comparison))?;
    table("task_summary.csv", &|p| write_csv(p, &report.tasks))?;
    table("per_class_metrics.csv", &|p| write_csv(p, &report.per_class))?;
    table("tumor_type_aggregate.csv", &|p| write_csv(p, &report.aggregates))?;
    table("report.txt", &|p| fs::write(p, report.to_string()).map_err(|e| Error::io(p, e)))?;

    let bars: Vec<(String, f64)> = report
        .tasks
        .iter()
        .filter_map(|r| r.accuracy.map(|a| (format!("{} {}", r.task, r.model), a)))
        .collect();
    let path = out_dir.join("accuracy.svg");
    if plot(plots::accuracy_bars(&path, "Test accuracy", &bars)) {
        written.push(path);
    }
    for task in report.grid.tasks.iter().copied().filter(|t| *t != TaskName::Multiclass) {
        let curves: Vec<(String, &RocCurve)> = report
            .grid
            .models
            .iter()
            .filter_map(|&key| {
                let run = report.runs.get(&run_id(task, key.backbone, key.seed))?;
                Some((model_label(key, &report.grid), run.roc.as_ref()?))
            })
            .collect();
        if curves.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("roc_{task}.svg"));
        if plot(plots::roc_plot(&path, &format!("ROC {task}"), &curves)) {
            written.push(path);
        }
    }
    Ok(written)
}

fn plot(result: Result<()>) -> bool {
    let ok = result.is_ok();
    best_effort(result);
    ok
}

fn num(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x:.digits$}"))
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "Multiclass backbone comparison (weighted averages)")?;
        writeln!(
            s,
            "{:<14} {:>9} {:>9} {:>9} {:>9} {:>10}",
            "model", "precision", "recall", "f1", "accuracy", "published"
        )?;
        for r in &self.comparison {
            writeln!(
                s,
                "{:<14} {:>9} {:>9} {:>9} {:>9} {:>10.3}",
                r.model,
                num(r.weighted_precision, 4),
                num(r.weighted_recall, 4),
                num(r.weighted_f1, 4),
                num(r.accuracy, 4),
                r.published_accuracy
            )?;
        }

        writeln!(s, "\nPer-task results")?;
        writeln!(
            s,
            "{:<11} {:<14} {:>9} {:>9} {:>9} {:>9} {:>8} {:>10}",
            "task", "model", "precision", "recall", "f1", "accuracy", "auc", "published"
        )?;
        for r in &self.tasks {
            writeln!(
                s,
                "{:<11} {:<14} {:>9} {:>9} {:>9} {:>9} {:>8} {:>10}",
                r.task.as_str(),
                r.model,
                num(r.weighted_precision, 4),
                num(r.weighted_recall, 4),
                num(r.weighted_f1, 4),
                num(r.accuracy, 4),
                if r.status == OK && r.auc.is_none() && r.task != TaskName::Multiclass {
                    "n/a".to_string()
                } else if r.task == TaskName::Multiclass {
                    "-".to_string()
                } else {
                    num(r.auc, 4)
                },
                r.published_auc.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
            )?;
        }

        writeln!(s, "\nPer-class metrics")?;
        writeln!(
            s,
            "{:<11} {:<14} {:<6} {:>9} {:>9} {:>9} {:>8}",
            "task", "model", "class", "precision", "recall", "f1", "support"
        )?;
        for r in &self.per_class {
            writeln!(
                s,
                "{:<11} {:<14} {:<6} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                r.task.as_str(),
                r.model,
                r.class,
                r.precision,
                r.recall,
                r.f1,
                r.support
            )?;
        }

        let (nt, nct, vt) = reference::VGG19_TUMOR_TYPE_PERCENT;
        writeln!(s, "\nTile accuracy by tumor type (%)")?;
        writeln!(s, "{:<14} {:>8} {:>8} {:>8}", "model", "NT", "NCT", "VT")?;
        for r in &self.aggregates {
            writeln!(
                s,
                "{:<14} {:>8} {:>8} {:>8}",
                r.model,
                num(r.nt_percent, 2),
                num(r.nct_percent, 2),
                num(r.vt_percent, 2)
            )?;
        }
        writeln!(s, "{:<14} {nt:>8.2} {nct:>8.2} {vt:>8.2}", "published")?;

        if !self.missing.is_empty() {
            writeln!(s, "\nMissing runs:")?;
            for id in &self.missing {
                writeln!(s, "  {id}")?;
            }
        }
        f.write_str(s.trim_end())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_parsed_from_run_id() {
        assert_eq!(parse_seed("NT_vs_REST__VGG19__seed12"), Some(12));
        assert_eq!(parse_seed("NT_vs_REST__VGG19"), None);
    }

    #[test]
    fn reference_table_is_complete() {
        for b in Backbone::ALL {
            let [p, r, f1, acc] = reference::multiclass(b);
            assert!([p, r, f1, acc].iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(reference::multiclass(Backbone::VGG19)[3], 0.939);
        assert!(TaskName::BINARY.iter().all(|&t| reference::vgg19_auc(t).is_some()));
    }
}
