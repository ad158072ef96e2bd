//! The five classification tasks and their label remappings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{ClassLabel, DatasetManifest};
use crate::pipeline::Sample;
use crate::split::{Partition, SplitAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskName {
    #[serde(rename = "NT_vs_REST")]
    NtVsRest,
    #[serde(rename = "NCT_vs_NT")]
    NctVsNt,
    #[serde(rename = "VT_vs_NT")]
    VtVsNt,
    #[serde(rename = "NCT_vs_VT")]
    NctVsVt,
    #[serde(rename = "MULTICLASS")]
    Multiclass,
}

impl TaskName {
    pub const ALL: [TaskName; 5] = [
        TaskName::NtVsRest,
        TaskName::NctVsNt,
        TaskName::VtVsNt,
        TaskName::NctVsVt,
        TaskName::Multiclass,
    ];

    pub const BINARY: [TaskName; 4] = [
        TaskName::NtVsRest,
        TaskName::NctVsNt,
        TaskName::VtVsNt,
        TaskName::NctVsVt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::NtVsRest => "NT_vs_REST",
            TaskName::NctVsNt => "NCT_vs_NT",
            TaskName::VtVsNt => "VT_vs_NT",
            TaskName::NctVsVt => "NCT_vs_VT",
            TaskName::Multiclass => "MULTICLASS",
        }
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec::new(self)
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: TaskName,
    /// Task-class index per [`ClassLabel`] (indexed by the label's encoding);
    /// `None` drops the class from the task.
    pub label_map: [Option<usize>; 3],
    pub n_classes: usize,
    /// Class scored by the ROC curve; binary tasks only.
    pub positive_class: Option<usize>,
    pub class_names: Vec<String>,
}

impl TaskSpec {
    pub fn new(name: TaskName) -> Self {
        use ClassLabel::*;
        let (pairs, class_names): (&[(ClassLabel, usize)], &[&str]) = match name {
            TaskName::NtVsRest => (
                &[(NonTumor, 0), (NecroticTumor, 1), (ViableTumor, 1)],
                &["NT", "REST"],
            ),
            TaskName::NctVsNt => (&[(NecroticTumor, 0), (NonTumor, 1)], &["NCT", "NT"]),
            TaskName::VtVsNt => (&[(NonTumor, 0), (ViableTumor, 1)], &["NT", "VT"]),
            TaskName::NctVsVt => (&[(NecroticTumor, 0), (ViableTumor, 1)], &["NCT", "VT"]),
            TaskName::Multiclass => (
                &[(NonTumor, 0), (NecroticTumor, 1), (ViableTumor, 2)],
                &["NT", "NCT", "VT"],
            ),
        };
        let mut label_map = [None; 3];
        for &(label, idx) in pairs {
            label_map[label.index()] = Some(idx);
        }
        let n_classes = class_names.len();
        Self {
            name,
            label_map,
            n_classes,
            positive_class: (n_classes == 2).then_some(1),
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn map_label(&self, label: ClassLabel) -> Option<usize> {
        self.label_map[label.index()]
    }

    pub fn is_binary(&self) -> bool {
        self.n_classes == 2
    }
}

/// Per-partition samples of one task, in manifest order.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub task: TaskSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskDataset {
    pub fn partition(&self, p: Partition) -> &[Sample] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tile count per task class over all partitions.
    pub fn class_totals(&self) -> Vec<usize> {
        let mut totals = vec![0; self.task.n_classes];
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            totals[s.target] += 1;
        }
        totals
    }
}

pub fn derive_task(
    manifest: &DatasetManifest,
    split: &SplitAssignment,
    task: &TaskSpec,
) -> Result<TaskDataset> {
    let mut out = TaskDataset {
        task: task.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for r in manifest.records() {
        let Some(target) = task.map_label(r.label) else {
            continue;
        };
        let partition = split.partition_of(&r.tile_id).ok_or_else(|| {
            Error::TaskDerivation(format!("tile {:?} is missing from the split", r.tile_id))
        })?;
        let sample = Sample::from_file(r.tile_id.clone(), r.image_path.clone(), target);
        match partition {
            Partition::Train => out.train.push(sample),
            Partition::Val => out.val.push(sample),
            Partition::Test => out.test.push(sample),
        }
    }
    for p in Partition::ALL {
        if out.partition(p).is_empty() {
            return Err(Error::TaskDerivation(format!(
                "task {} has an empty {p:?} partition",
                task.name
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::TileRecord;
    use crate::split::{split_dataset, SplitRatios};
    use std::collections::HashSet;

    fn manifest(counts: [usize; 3]) -> DatasetManifest {
        let mut records = Vec::new();
        for label in ClassLabel::ALL {
            for i in 0..counts[label.index()] {
                records.push(TileRecord {
                    tile_id: format!("{}-{i:04}", label.code()),
                    image_path: format!("{}-{i}.png", label.code()).into(),
                    label,
                    source_wsi_id: None,
                    width_px: 1024,
                    height_px: 1024,
                });
            }
        }
        DatasetManifest::new(records).unwrap()
    }

    #[test]
    fn label_maps() {
        use ClassLabel::*;
        let t = TaskName::NtVsRest.spec();
        assert_eq!(t.label_map, [Some(0), Some(1), Some(1)]);
        let t = TaskName::NctVsNt.spec();
        assert_eq!(
            (t.map_label(NecroticTumor), t.map_label(NonTumor), t.map_label(ViableTumor)),
            (Some(0), Some(1), None)
        );
        let t = TaskName::VtVsNt.spec();
        assert_eq!(
            (t.map_label(NonTumor), t.map_label(ViableTumor), t.map_label(NecroticTumor)),
            (Some(0), Some(1), None)
        );
        let t = TaskName::NctVsVt.spec();
        assert_eq!(
            (t.map_label(NecroticTumor), t.map_label(ViableTumor), t.map_label(NonTumor)),
            (Some(0), Some(1), None)
        );
        let t = TaskName::Multiclass.spec();
        assert_eq!(t.n_classes, 3);
        assert_eq!(t.positive_class, None);
        for c in ClassLabel::ALL {
            assert_eq!(t.map_label(c), Some(c.index()));
        }
        for name in TaskName::BINARY {
            assert_eq!(name.spec().positive_class, Some(1));
        }
    }

    #[test]
    fn task_names_round_trip() {
        for t in TaskName::ALL {
            assert_eq!(t.as_str().parse::<TaskName>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
        assert!("NT_vs_NCT".parse::<TaskName>().is_err());
    }

    #[test]
    fn canonical_task_totals() {
        let m = manifest([536, 263, 345]);
        let s = split_dataset(&m, SplitRatios::DEFAULT, 42).unwrap();
        let d = derive_task(&m, &s, &TaskName::NtVsRest.spec()).unwrap();
        assert_eq!(d.class_totals(), vec![536, 608]);

        let d = derive_task(&m, &s, &TaskName::NctVsVt.spec()).unwrap();
        assert_eq!(d.len(), 608);
        assert!(d
            .train
            .iter()
            .chain(&d.val)
            .chain(&d.test)
            .all(|x| !x.id.starts_with("NT")));

        let d = derive_task(&m, &s, &TaskName::Multiclass.spec()).unwrap();
        assert_eq!(d.len(), 1144);
        assert_eq!(d.class_totals(), vec![536, 263, 345]);
        assert_eq!(
            [d.train.len(), d.val.len(), d.test.len()],
            [800, 114, 230]
        );
    }

    #[test]
    fn partitions_and_order_are_preserved() {
        let m = manifest([30, 20, 25]);
        let s = split_dataset(&m, SplitRatios::DEFAULT, 1).unwrap();
        for name in TaskName::ALL {
            let d = derive_task(&m, &s, &name.spec()).unwrap();
            let mut seen = HashSet::new();
            for p in Partition::ALL {
                let ids: Vec<&str> = d.partition(p).iter().map(|x| x.id.as_str()).collect();
                let mut sorted = ids.clone();
                sorted.sort();
                assert_eq!(ids, sorted, "manifest order");
                for x in d.partition(p) {
                    assert_eq!(s.partition_of(&x.id), Some(p));
                    assert!(seen.insert(x.id.clone()), "tile under two task classes");
                    let label = m.get(&x.id).unwrap().label;
                    assert_eq!(d.task.map_label(label), Some(x.target));
                }
            }
        }
    }

    #[test]
    fn reloaded_split_reproduces_datasets() {
        let m = manifest([30, 20, 25]);
        let s = split_dataset(&m, SplitRatios::DEFAULT, 8).unwrap();
        let reloaded = SplitAssignment::from_json(&s.to_json().unwrap()).unwrap();
        for name in TaskName::ALL {
            let a = derive_task(&m, &s, &name.spec()).unwrap();
            let b = derive_task(&m, &reloaded, &name.spec()).unwrap();
            for p in Partition::ALL {
                let ka: Vec<_> = a.partition(p).iter().map(|x| (&x.id, x.target)).collect();
                let kb: Vec<_> = b.partition(p).iter().map(|x| (&x.id, x.target)).collect();
                assert_eq!(ka, kb);
            }
        }
    }

    #[test]
    fn empty_partition_is_an_error() {
        // 9 tiles at 70/10/20 leave floor(0.9) = 0 tiles for validation
        let m = manifest([3, 3, 3]);
        let s = split_dataset(&m, SplitRatios::DEFAULT, 0).unwrap();
        assert_eq!(s.sizes(), [6, 0, 3]);
        assert!(matches!(
            derive_task(&m, &s, &TaskName::NctVsNt.spec()),
            Err(Error::TaskDerivation(_))
        ));
        let mut m2 = s.clone();
        m2.membership.remove("NT-0000");
        assert!(derive_task(&m, &m2, &TaskName::Multiclass.spec()).is_err());
    }
}
