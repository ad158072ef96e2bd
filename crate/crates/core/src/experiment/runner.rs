use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use candle_core::Device;

use super::plan::{ExperimentPlan, RunSpec};
use super::plots;
use crate::error::{Error, Result};
use crate::manifest::{load_manifest, load_manifest_with, ClassLabel, DatasetManifest, Layout, LoadOptions, MANIFEST_FILE_NAME};
use crate::metrics::{confusion, report, roc, EvaluationRecord, CONFUSION_FILE_NAME, METRICS_FILE_NAME, ROC_FILE_NAME};
use crate::model::{build_model, CHECKPOINT_FILE_NAME};
use crate::pipeline::{BatchStream, StreamMode};
use crate::split::{split_dataset_with, Partition, SplitAssignment, SPLIT_FILE_NAME};
use crate::task::{derive_task, TaskDataset};
use crate::train::{
    predict, train, FeatureCache, TrainOptions, TrainRunRecord, HISTORY_FILE_NAME, RUN_FILE_NAME,
};

pub const PLOTS_DIR_NAME: &str = "plots";

/// What `prepare` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub manifest_path: PathBuf,
    pub split_path: PathBuf,
    pub total: usize,
    pub class_counts: Vec<(ClassLabel, usize)>,
    /// `[train, val, test]`
    pub partition_sizes: [usize; 3],
    /// Per class, `[train, val, test]`.
    pub class_partition_counts: [[usize; 3]; 3],
}

impl fmt::Display for PrepareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tiles: {}", self.total)?;
        for (label, n) in &self.class_counts {
            let [tr, va, te] = self.class_partition_counts[label.index()];
            writeln!(f, "  {:<4} {n:>6}   train {tr:>5}  val {va:>5}  test {te:>5}", label.code())?;
        }
        let [tr, va, te] = self.partition_sizes;
        writeln!(f, "partitions: train {tr}, val {va}, test {te}")?;
        writeln!(f, "manifest: {}", self.manifest_path.display())?;
        write!(f, "split: {}", self.split_path.display())
    }
}

/// Ingests the dataset and writes `manifest.csv` and `split.json` into the
/// results directory.
pub fn prepare(plan: &ExperimentPlan, results_dir: &Path) -> Result<PrepareSummary> {
    let opts = LoadOptions {
        layout: plan.dataset.layout,
        expected_size: plan.dataset.expected_size.map(|[w, h]| (w, h)),
    };
    let manifest = load_manifest_with(&plan.dataset.root, &opts)?;
    let split = split_dataset_with(&manifest, plan.split.ratios()?, plan.split.seed, plan.split.options())?;
    fs::create_dir_all(results_dir).map_err(|e| Error::io(results_dir, e))?;
    let manifest_path = results_dir.join(MANIFEST_FILE_NAME);
    let split_path = results_dir.join(SPLIT_FILE_NAME);
    manifest.write_csv(&manifest_path)?;
    split.save(&split_path)?;
    Ok(PrepareSummary {
        manifest_path,
        split_path,
        total: manifest.len(),
        class_counts: manifest.class_counts().iter().map(|(&c, &n)| (c, n)).collect(),
        partition_sizes: split.sizes(),
        class_partition_counts: split.class_partition_counts(&manifest),
    })
}

/// Reads back what `prepare` wrote and checks it against the plan.
pub fn load_prepared(plan: &ExperimentPlan, results_dir: &Path) -> Result<(DatasetManifest, SplitAssignment)> {
    let manifest_path = results_dir.join(MANIFEST_FILE_NAME);
    let split_path = results_dir.join(SPLIT_FILE_NAME);
    if !manifest_path.is_file() || !split_path.is_file() {
        return Err(Error::Config(format!(
            "{} has no {MANIFEST_FILE_NAME}/{SPLIT_FILE_NAME}; run `prepare` first",
            results_dir.display()
        )));
    }
    let manifest = load_manifest(&manifest_path, Layout::CsvManifest)?;
    let split = SplitAssignment::load(&split_path)?;
    if split.seed != plan.split.seed || split.ratios.as_array() != plan.split.ratios {
        return Err(Error::Config(format!(
            "{} was made with seed {} and ratios {:?}, the config asks for seed {} and {:?}; rerun `prepare`",
            split_path.display(),
            split.seed,
            split.ratios.as_array(),
            plan.split.seed,
            plan.split.ratios
        )));
    }
    split.validate_against(&manifest)?;
    Ok((manifest, split))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub tasks: Option<Vec<crate::task::TaskName>>,
    pub backbones: Option<Vec<crate::model::Backbone>>,
    /// Retrain runs that already completed.
    pub force: bool,
    /// Runs executed concurrently; 0 and 1 both mean sequential.
    pub parallel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed { test_accuracy: f64 },
    /// Already completed by an earlier invocation.
    Skipped,
    Failed { error: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub outcomes: Vec<(String, RunOutcome)>,
}

impl RunSummary {
    fn count(&self, f: impl Fn(&RunOutcome) -> bool) -> usize {
        self.outcomes.iter().filter(|(_, o)| f(o)).count()
    }

    pub fn completed(&self) -> usize {
        self.count(|o| matches!(o, RunOutcome::Completed { .. }))
    }

    pub fn skipped(&self) -> usize {
        self.count(|o| matches!(o, RunOutcome::Skipped))
    }

    pub fn failed(&self) -> usize {
        self.count(|o| matches!(o, RunOutcome::Failed { .. }))
    }

    pub fn any_failed(&self) -> bool {
        self.failed() > 0
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, o) in &self.outcomes {
            match o {
                RunOutcome::Completed { test_accuracy } => writeln!(f, "{id}: done, test accuracy {test_accuracy:.4}")?,
                RunOutcome::Skipped => writeln!(f, "{id}: already complete, skipped")?,
                RunOutcome::Failed { error } => writeln!(f, "{id}: FAILED: {error}")?,
            }
        }
        write!(
            f,
            "{} trained, {} skipped, {} failed",
            self.completed(),
            self.skipped(),
            self.failed()
        )
    }
}

/// A run counts as complete once its evaluation has been written.
pub fn is_complete(run_dir: &Path) -> bool {
    run_dir.join(METRICS_FILE_NAME).is_file() && run_dir.join(RUN_FILE_NAME).is_file()
}

/// Trains and evaluates every selected cell of the matrix. Errors that
/// concern a single run are reported in the summary; an `Err` means the
/// matrix could not start at all.
pub fn run_matrix(plan: &ExperimentPlan, results_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    plan.validate()?;
    let runs = plan.runs(opts.tasks.as_deref(), opts.backbones.as_deref())?;
    let (manifest, split) = load_prepared(plan, results_dir)?;
    let cache = FeatureCache::new();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; runs.len()]);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(spec) = runs.get(i) else { break };
        let outcome = run_one(plan, spec, &manifest, &split, results_dir, &cache, opts.force);
        if let RunOutcome::Failed { error } = &outcome {
            log::error!("{}: {error}", spec.run_id);
        }
        results.lock().expect("results lock")[i] = Some(outcome);
    };
    let workers = opts.parallel.clamp(1, runs.len().max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(&worker);
            }
        });
    }
    let outcomes = results.into_inner().expect("results lock");
    Ok(RunSummary {
        outcomes: runs
            .iter()
            .zip(outcomes)
            .map(|(r, o)| (r.run_id.clone(), o.expect("every run is visited")))
            .collect(),
    })
}

fn run_one(
    plan: &ExperimentPlan,
    spec: &RunSpec,
    manifest: &DatasetManifest,
    split: &SplitAssignment,
    results_dir: &Path,
    cache: &FeatureCache,
    force: bool,
) -> RunOutcome {
    let final_dir = results_dir.join(&spec.run_id);
    if !force && is_complete(&final_dir) {
        log::info!("{}: already complete", spec.run_id);
        return RunOutcome::Skipped;
    }
    // Each process stages into its own directory and publishes with a rename,
    // so concurrent writers of one run id never interleave files.
    let staging = results_dir.join(format!(".{}.{}.partial", spec.run_id, std::process::id()));
    let outcome = execute(plan, spec, manifest, split, &staging, &final_dir, cache);
    // A failed run is published too when it got as far as writing run.json.
    let keep = outcome.is_ok() || staging.join(RUN_FILE_NAME).is_file();
    let published = if keep { publish(&staging, &final_dir, force) } else { Ok(()) };
    if staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    match (outcome, published) {
        (Ok(acc), Ok(())) => RunOutcome::Completed { test_accuracy: acc },
        (Err(e), _) | (Ok(_), Err(e)) => RunOutcome::Failed { error: e.to_string() },
    }
}

fn publish(staging: &Path, final_dir: &Path, force: bool) -> Result<()> {
    if !staging.exists() {
        return Ok(());
    }
    if final_dir.exists() {
        if !force && is_complete(final_dir) {
            log::warn!("{} was completed concurrently; keeping that result", final_dir.display());
            return fs::remove_dir_all(staging).map_err(|e| Error::io(staging, e));
        }
        fs::remove_dir_all(final_dir).map_err(|e| Error::io(final_dir, e))?;
    }
    fs::rename(staging, final_dir).map_err(|e| Error::io(final_dir, e))
}

/// Trains one cell into `staging`. Training failures still leave a
/// `run.json` behind; the returned error then carries the reason.
fn execute(
    plan: &ExperimentPlan,
    spec: &RunSpec,
    manifest: &DatasetManifest,
    split: &SplitAssignment,
    staging: &Path,
    final_dir: &Path,
    cache: &FeatureCache,
) -> Result<f64> {
    if staging.exists() {
        fs::remove_dir_all(staging).map_err(|e| Error::io(staging, e))?;
    }
    fs::create_dir_all(staging.join(PLOTS_DIR_NAME)).map_err(|e| Error::io(staging, e))?;
    let task = spec.task.spec();
    let device = Device::Cpu;

    let record_failure = |e: Error| -> Error {
        let record = TrainRunRecord::failed_before_training(
            &spec.run_id,
            spec.task,
            spec.model.clone(),
            plan.train.clone(),
            plan.augment.clone(),
            &e,
        );
        match record.save(&staging.join(RUN_FILE_NAME)) {
            Ok(()) => e,
            Err(save) => Error::Training(format!("{e}; writing run.json also failed: {save}")),
        }
    };
    let data = derive_task(manifest, split, &task).map_err(record_failure)?;
    let mut model = match plan
        .weights
        .source(spec.model.backbone, plan.train.seed)
        .and_then(|source| build_model(&spec.model, &source, &device))
    {
        Ok(m) => m,
        Err(e) => return Err(record_failure(e)),
    };

    let (h, w) = (spec.model.height(), spec.model.width());
    let sizes = plan.train.batch_sizes;
    let stream = |p: Partition, bs: usize, mode: StreamMode| -> Result<BatchStream> {
        Ok(BatchStream::new(partition(&data, p), bs, mode, plan.augment.clone())?.with_input_size(h, w))
    };
    let train_stream = stream(Partition::Train, sizes.train, StreamMode::Train)?;
    let val_stream = stream(Partition::Val, sizes.val, StreamMode::Eval)?;
    let test_stream = stream(Partition::Test, sizes.test, StreamMode::Eval)?;

    let mut record = train(
        &mut model,
        &task,
        &train_stream,
        &val_stream,
        &plan.train,
        TrainOptions {
            run_id: spec.run_id.clone(),
            checkpoint_path: Some(staging.join(CHECKPOINT_FILE_NAME)),
            feature_cache: Some(cache),
        },
    )?;
    if record.checkpoint_path.is_some() {
        record.checkpoint_path = Some(final_dir.join(CHECKPOINT_FILE_NAME));
    }
    record.save(&staging.join(RUN_FILE_NAME))?;
    record.write_history_csv(&staging.join(HISTORY_FILE_NAME))?;
    best_effort(plots::history_plot(
        &staging.join(PLOTS_DIR_NAME).join("history.svg"),
        &spec.run_id,
        &record.epoch_history,
    ));
    if !record.succeeded() {
        return Err(Error::Training(record.error.clone().unwrap_or_else(|| "training failed".into())));
    }

    let predictions = predict(&model, &test_stream, Some(cache))?;
    let cm = confusion(&predictions.true_class, &predictions.predicted_class, task.n_classes)?
        .with_class_names(&task.class_names)?;
    cm.write_csv(&staging.join(CONFUSION_FILE_NAME))?;
    let mut auc = None;
    if let Some(positive) = task.positive_class {
        match roc(&predictions.scores(positive), &predictions.true_class, positive) {
            Ok(curve) => {
                curve.write_csv(&staging.join(ROC_FILE_NAME))?;
                best_effort(plots::roc_plot(
                    &staging.join(PLOTS_DIR_NAME).join("roc.svg"),
                    &spec.run_id,
                    &[(spec.model.backbone.to_string(), &curve)],
                ));
                auc = Some(curve.auc);
            }
            Err(e @ Error::RocUndefined(_)) => log::warn!("{}: {e}", spec.run_id),
            Err(e) => return Err(e),
        }
    }
    let evaluation = EvaluationRecord {
        run_id: spec.run_id.clone(),
        task: spec.task,
        backbone: spec.model.backbone,
        report: report(&cm),
        confusion: cm,
        auc,
        positive_class: task.positive_class,
    };
    // Written last: its presence marks the run as complete.
    evaluation.save(&staging.join(METRICS_FILE_NAME))?;
    Ok(evaluation.report.accuracy)
}

fn partition(data: &TaskDataset, p: Partition) -> Vec<crate::pipeline::Sample> {
    data.partition(p).to_vec()
}

pub(crate) fn best_effort(result: Result<()>) {
    if let Err(e) = result {
        log::warn!("{e}; continuing without the plot");
    }
}
