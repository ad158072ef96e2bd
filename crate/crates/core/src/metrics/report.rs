use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A metric that was set to 0 because its denominator was empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateMetric {
    pub class: String,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    /// Support-weighted averages.
    pub weighted: Averages,
    pub accuracy: f64,
    pub total: u64,
    #[serde(default)]
    pub warnings: Vec<DegenerateMetric>,
}

impl MetricReport {
    pub fn has_degenerate_classes(&self) -> bool {
        !self.warnings.is_empty()
    }

    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == name)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn report(cm: &ConfusionMatrix) -> MetricReport {
    let mut warnings = Vec::new();
    let mut flag = |class: &str, metric: &str| {
        warnings.push(DegenerateMetric {
            class: class.to_string(),
            metric: metric.to_string(),
        })
    };
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes)
        .map(|c| {
            let name = &cm.class_names[c];
            let hit = cm.counts[c][c];
            let support = cm.row_sum(c);
            let precision = ratio(hit, cm.col_sum(c)).unwrap_or_else(|| {
                flag(name, "precision");
                0.0
            });
            let recall = ratio(hit, support).unwrap_or_else(|| {
                flag(name, "recall");
                0.0
            });
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class: name.clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();

    let total = cm.total();
    let weighted = if total > 0 {
        let avg = |f: fn(&ClassMetrics) -> f64| {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        };
        Averages {
            precision: avg(|c| c.precision),
            recall: avg(|c| c.recall),
            f1: avg(|c| c.f1),
        }
    } else {
        Averages::default()
    };
    MetricReport {
        per_class,
        weighted,
        accuracy: ratio(cm.trace(), total).unwrap_or(0.0),
        total,
        warnings,
    }
}

/// Everything written to `metrics.json` for one evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub run_id: String,
    pub task: crate::task::TaskName,
    pub backbone: crate::model::Backbone,
    pub report: MetricReport,
    pub confusion: ConfusionMatrix,
    /// Present for binary tasks.
    pub auc: Option<f64>,
    pub positive_class: Option<usize>,
}

impl EvaluationRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
