use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Layout;
use crate::model::{Backbone, ModelConfig, WeightSource, WEIGHTS_DIR_ENV};
use crate::pipeline::AugmentConfig;
use crate::split::{SplitOptions, SplitRatios};
use crate::task::TaskName;
use crate::train::TrainConfig;

/// Results directory used when neither the command line nor the plan names one.
pub const RESULTS_DIR_ENV: &str = "HISTO_TL_RESULTS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    #[serde(default)]
    pub layout: Layout,
    /// `[width, height]` every tile must have.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_size: Option<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub group_by_wsi: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default().as_array(),
            seed: 42,
            group_by_wsi: false,
        }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> Result<SplitRatios> {
        let [train, val, test] = self.ratios;
        SplitRatios::new(train, val, test)
    }

    pub fn options(&self) -> SplitOptions {
        SplitOptions {
            group_by_wsi: self.group_by_wsi,
        }
    }
}

/// A model of the matrix; the class count comes from each task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub fc1_units: usize,
    pub fc2_units: usize,
    pub dropout_rate: f64,
    pub freeze_backbone: bool,
    pub input_size: [usize; 3],
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::from(Backbone::VGG19)
    }
}

impl From<Backbone> for ModelSpec {
    fn from(backbone: Backbone) -> Self {
        let c = ModelConfig::new(backbone, 2);
        Self {
            backbone,
            fc1_units: c.fc1_units,
            fc2_units: c.fc2_units,
            dropout_rate: c.dropout_rate,
            freeze_backbone: c.freeze_backbone,
            input_size: c.input_size,
        }
    }
}

impl ModelSpec {
    pub fn for_classes(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            n_classes,
            fc1_units: self.fc1_units,
            fc2_units: self.fc2_units,
            dropout_rate: self.dropout_rate,
            freeze_backbone: self.freeze_backbone,
            input_size: self.input_size,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    /// Directory of `<Backbone>.safetensors` files; falls back to the
    /// `HISTO_TL_WEIGHTS` environment variable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Seeded random backbone weights instead of pretrained ones. Only
    /// useful for smoke tests.
    pub random_init: bool,
}

impl WeightsSection {
    pub fn source(&self, backbone: Backbone, seed: u64) -> Result<WeightSource> {
        if self.random_init {
            return Ok(WeightSource::Random { seed });
        }
        let dir = match &self.dir {
            Some(d) => d.clone(),
            None => std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
                Error::WeightLoad(format!(
                    "no weights directory configured for {backbone}; set [weights].dir or {WEIGHTS_DIR_ENV}"
                ))
            })?,
        };
        Ok(WeightSource::pretrained_in(&dir, backbone, seed))
    }
}

/// The whole experiment matrix: every task crossed with every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results_dir: Option<PathBuf>,
    #[serde(default = "all_tasks")]
    pub tasks: Vec<TaskName>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn all_tasks() -> Vec<TaskName> {
    TaskName::ALL.to_vec()
}

fn default_models() -> Vec<ModelSpec> {
    vec![ModelSpec::default()]
}

/// One cell of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: String,
    pub task: TaskName,
    pub model: ModelConfig,
}

pub fn run_id(task: TaskName, backbone: Backbone, seed: u64) -> String {
    format!("{task}__{backbone}__seed{seed}")
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(plan)
    }

    /// Reads a plan; a relative dataset root, weights directory or results
    /// directory is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut plan = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        anchor(&mut plan.dataset.root);
        if let Some(d) = plan.weights.dir.as_mut() {
            anchor(d);
        }
        if let Some(d) = plan.results_dir.as_mut() {
            anchor(d);
        }
        Ok(plan)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.split.ratios()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::Config("the plan lists no tasks".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("the plan lists no models".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            m.for_classes(2).validate()?;
            if self.models[..i].iter().any(|o| o.backbone == m.backbone) {
                return Err(Error::Config(format!("backbone {} is listed twice", m.backbone)));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return Err(Error::Config(format!("task {t} is listed twice")));
            }
        }
        Ok(())
    }

    /// The results directory: `explicit`, then the plan, then
    /// `HISTO_TL_RESULTS`.
    pub fn resolve_results_dir(&self, explicit: Option<&Path>) -> Result<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.results_dir.clone())
            .or_else(|| std::env::var_os(RESULTS_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                Error::Config(format!(
                    "no results directory: pass --results-dir, set results_dir in the config or {RESULTS_DIR_ENV}"
                ))
            })
    }

    /// Matrix cells in task-major order, optionally restricted to some tasks
    /// and backbones.
    pub fn runs(&self, tasks: Option<&[TaskName]>, backbones: Option<&[Backbone]>) -> Result<Vec<RunSpec>> {
        if let Some(ts) = tasks {
            if let Some(t) = ts.iter().find(|t| !self.tasks.contains(t)) {
                return Err(Error::Config(format!("task {t} is not part of the plan")));
            }
        }
        if let Some(bs) = backbones {
            if let Some(b) = bs.iter().find(|b| !self.models.iter().any(|m| m.backbone == **b)) {
                return Err(Error::Config(format!("model {b} is not part of the plan")));
            }
        }
        let mut out = Vec::new();
        for &task in &self.tasks {
            if tasks.is_some_and(|ts| !ts.contains(&task)) {
                continue;
            }
            for m in &self.models {
                if backbones.is_some_and(|bs| !bs.contains(&m.backbone)) {
                    continue;
                }
                out.push(RunSpec {
                    run_id: run_id(task, m.backbone, self.train.seed),
                    task,
                    model: m.for_classes(task.spec().n_classes),
                });
            }
        }
        Ok(out)
    }
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            results_dir: None,
            tasks: all_tasks(),
            dataset: DatasetSection {
                root: PathBuf::from("data"),
                layout: Layout::default(),
                expected_size: None,
            },
            split: SplitSection::default(),
            weights: WeightsSection::default(),
            models: default_models(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_a_fixed_point() {
        let mut plan = ExperimentPlan::default();
        plan.models.push(ModelSpec::from(Backbone::InceptionV3));
        plan.dataset.expected_size = Some([1024, 1024]);
        plan.weights.dir = Some("w".into());
        let text = plan.to_toml().unwrap();
        let parsed = ExperimentPlan::from_toml(&text).unwrap();
        assert_eq!(parsed, plan);
        assert_eq!(parsed.to_toml().unwrap(), text);
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let plan = ExperimentPlan::from_toml("[dataset]\nroot = \"tiles\"\n").unwrap();
        assert_eq!(plan.tasks, TaskName::ALL.to_vec());
        assert_eq!(plan.models, vec![ModelSpec::from(Backbone::VGG19)]);
        assert_eq!(plan.train, TrainConfig::default());
        assert_eq!(plan.split.ratios, [0.7, 0.1, 0.2]);
    }

    #[test]
    fn run_ids_cover_the_matrix() {
        let mut plan = ExperimentPlan::default();
        plan.models = vec![Backbone::VGG19.into(), Backbone::InceptionV3.into()];
        plan.train.seed = 3;
        let runs = plan.runs(None, None).unwrap();
        assert_eq!(runs.len(), 10);
        assert_eq!(runs[0].run_id, "NT_vs_REST__VGG19__seed3");
        let multi = plan.runs(Some(&[TaskName::Multiclass]), None).unwrap();
        assert_eq!(multi.len(), 2);
        assert!(multi.iter().all(|r| r.model.n_classes == 3));
        let one = plan
            .runs(Some(&[TaskName::NctVsVt]), Some(&[Backbone::InceptionV3]))
            .unwrap();
        assert_eq!(one[0].run_id, "NCT_vs_VT__InceptionV3__seed3");
        assert!(plan.runs(None, Some(&[Backbone::ResNet50])).is_err());
    }

    #[test]
    fn invalid_plans_are_rejected() {
        for text in [
            "tasks = []\n[dataset]\nroot = \"x\"\n",
            "[dataset]\nroot = \"x\"\n[split]\nratios = [0.5, 0.1, 0.1]\n",
            "[dataset]\nroot = \"x\"\n[train]\nlearning_rate = -1.0\n",
            "[dataset]\nroot = \"x\"\nunknown = 1\n",
            "[dataset]\nroot = \"x\"\n[[models]]\nbackbone = \"AlexNet\"\n",
        ] {
            assert!(matches!(ExperimentPlan::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
