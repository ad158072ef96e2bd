use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{EvaluationRecord, METRICS_FILE_NAME};
use crate::train::{TrainRunRecord, RUN_FILE_NAME};

/// Human-readable summary of one run directory.
pub fn inspect(results_dir: &Path, run_id: &str) -> Result<String> {
    let dir = results_dir.join(run_id);
    let run_path = dir.join(RUN_FILE_NAME);
    if !run_path.is_file() {
        return Err(Error::Config(format!("no run {run_id:?} in {}", results_dir.display())));
    }
    let run = TrainRunRecord::load(&run_path)?;
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "run:          {}", run.run_id);
    let _ = writeln!(w, "task:         {}", run.task);
    let m = &run.model_config;
    let _ = writeln!(
        w,
        "model:        {} -> fc {} -> fc {} -> {} classes, dropout {}, input {}x{}, {}",
        m.backbone,
        m.fc1_units,
        m.fc2_units,
        m.n_classes,
        m.dropout_rate,
        m.input_size[0],
        m.input_size[1],
        if m.freeze_backbone { "frozen backbone" } else { "fine-tuned backbone" }
    );
    if let Some(c) = run.parameter_counts {
        let _ = writeln!(
            w,
            "parameters:   backbone {}, head {}, trainable {}",
            c.backbone_params, c.head_params, c.trainable_params
        );
    }
    let t = &run.train_config;
    let _ = writeln!(
        w,
        "training:     lr {}, seed {}, batches {}/{}/{}, {:?} loss",
        t.learning_rate, t.seed, t.batch_sizes.train, t.batch_sizes.val, t.batch_sizes.test, run.loss
    );
    let _ = writeln!(
        w,
        "stopped:      {:?} after {} epochs ({:.1} s)",
        run.stop_reason,
        run.epoch_history.len(),
        run.wall_clock_seconds
    );
    if let Some(err) = &run.error {
        let _ = writeln!(w, "error:        {err}");
    }
    if let (Some(e), Some(acc)) = (run.best_epoch, run.best_val_acc) {
        let _ = writeln!(w, "best epoch:   {e} (val acc {acc:.4})");
    }
    if let Some(last) = run.epoch_history.last() {
        let _ = writeln!(
            w,
            "last epoch:   loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            last.train_loss, last.train_acc, last.val_loss, last.val_acc
        );
    }
    let metrics_path = dir.join(METRICS_FILE_NAME);
    if metrics_path.is_file() {
        let ev = EvaluationRecord::load(&metrics_path)?;
        let r = &ev.report;
        let _ = writeln!(
            w,
            "test:         accuracy {:.4}, weighted P/R/F1 {:.4}/{:.4}/{:.4}{}",
            r.accuracy,
            r.weighted.precision,
            r.weighted.recall,
            r.weighted.f1,
            ev.auc.map(|a| format!(", AUC {a:.4}")).unwrap_or_default()
        );
        for c in &r.per_class {
            let _ = writeln!(
                w,
                "  {:<5} precision {:.4} recall {:.4} f1 {:.4} support {}",
                c.class, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(w, "confusion (rows = truth):");
        for (name, row) in ev.confusion.class_names.iter().zip(&ev.confusion.counts) {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>6}")).collect();
            let _ = writeln!(w, "  {name:<5}{}", cells.join(""));
        }
    } else {
        let _ = writeln!(w, "test:         not evaluated");
    }
    Ok(s.trim_end().to_string())
}
