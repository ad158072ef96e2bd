//! Seeded train/validation/test partitioning.
//!
//! Partition sizes follow a floor/floor/remainder rule at the dataset level:
//! `train = floor(N * r_train)`, `val = floor(N * r_val)`, `test` takes what
//! is left. In the default stratified mode those totals are apportioned over
//! the classes: each class first receives `floor(n_c * r)` tiles per
//! partition, and the few tiles still needed to reach the dataset-level
//! targets go to the classes with the largest fractional remainders.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{ClassLabel, DatasetManifest};

pub const SPLIT_FILE_NAME: &str = "split.json";

/// Absorbs representation error in products such as `0.29 * 100`.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::Split(format!("ratios must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl From<[f64; 3]> for SplitRatios {
    fn from(a: [f64; 3]) -> Self {
        SplitRatios {
            train: a[0],
            val: a[1],
            test: a[2],
        }
    }
}

impl From<SplitRatios> for [f64; 3] {
    fn from(r: SplitRatios) -> Self {
        r.as_array()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitOptions {
    /// Keep all tiles of one whole-slide image in the same partition. Tiles
    /// without a slide id are treated as singleton groups. Sizes then track
    /// the dataset-level targets only approximately.
    pub group_by_wsi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub membership: BTreeMap<String, Partition>,
}

impl SplitAssignment {
    pub fn partition_of(&self, tile_id: &str) -> Option<Partition> {
        self.membership.get(tile_id).copied()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for p in self.membership.values() {
            sizes[p.slot()] += 1;
        }
        sizes
    }

    /// Per-class, per-partition tile counts, indexed `[class][partition]`.
    pub fn class_partition_counts(&self, manifest: &DatasetManifest) -> [[usize; 3]; 3] {
        let mut out = [[0; 3]; 3];
        for r in manifest.records() {
            if let Some(p) = self.partition_of(&r.tile_id) {
                out[r.label.index()][p.slot()] += 1;
            }
        }
        out
    }

    /// Checks that the assignment covers exactly the manifest's tile ids.
    pub fn validate_against(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.membership.len() != manifest.len() {
            return Err(Error::Integrity(format!(
                "split covers {} tiles but manifest has {}",
                self.membership.len(),
                manifest.len()
            )));
        }
        for r in manifest.records() {
            if !self.membership.contains_key(&r.tile_id) {
                return Err(Error::Integrity(format!(
                    "tile {:?} has no split assignment",
                    r.tile_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let split: SplitAssignment = serde_json::from_str(s)?;
        split.ratios.validate()?;
        Ok(split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

pub fn split_dataset(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    split_dataset_with(manifest, ratios, seed, SplitOptions::default())
}

pub fn split_dataset_with(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    seed: u64,
    opts: SplitOptions,
) -> Result<SplitAssignment> {
    ratios.validate()?;
    for c in ClassLabel::ALL {
        let n = manifest.count(c);
        if n > 0 && n < 3 {
            return Err(Error::Split(format!(
                "class {c} has {n} tiles; at least 3 are needed to populate train/val/test"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let membership = if opts.group_by_wsi {
        grouped_membership(manifest, ratios, &mut rng)?
    } else {
        stratified_membership(manifest, ratios, &mut rng)?
    };
    Ok(SplitAssignment {
        seed,
        ratios,
        membership,
    })
}

fn floor_share(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio + FLOOR_EPS).floor() as usize
}

/// Per-stratum `[train, val, test]` sizes for the given class sizes.
pub fn stratum_quotas(class_sizes: &[usize], ratios: SplitRatios) -> Result<Vec<[usize; 3]>> {
    ratios.validate()?;
    let total: usize = class_sizes.iter().sum();
    let mut quotas: Vec<[usize; 3]> = class_sizes.iter().map(|_| [0; 3]).collect();
    // fractional remainder of n_c * r_p for train (slot 0) and val (slot 1)
    let mut fractions: Vec<[f64; 2]> = vec![[0.0; 2]; class_sizes.len()];
    let mut bumped = vec![false; class_sizes.len()];

    for (c, &n) in class_sizes.iter().enumerate() {
        for (slot, r) in [ratios.train, ratios.val].into_iter().enumerate() {
            let base = floor_share(n, r);
            quotas[c][slot] = base;
            fractions[c][slot] = (n as f64 * r - base as f64).max(0.0);
        }
    }

    for (slot, r) in [ratios.train, ratios.val].into_iter().enumerate() {
        let target = floor_share(total, r);
        let assigned: usize = quotas.iter().map(|q| q[slot]).sum();
        let mut deficit = target.saturating_sub(assigned);
        if deficit == 0 {
            continue;
        }
        // A class whose train and val remainders add past one tile would push
        // its test share more than one tile above proportion; serve it first.
        let needs_bump =
            |c: usize| fractions[c][0] + fractions[c][1] > 1.0 && !bumped[c];
        let mut order: Vec<usize> = (0..class_sizes.len()).collect();
        order.sort_by(|&a, &b| {
            needs_bump(b)
                .cmp(&needs_bump(a))
                .then(fractions[b][slot].total_cmp(&fractions[a][slot]))
                .then(a.cmp(&b))
        });
        for c in order {
            if deficit == 0 {
                break;
            }
            if fractions[c][slot] > 0.0 && quotas[c][0] + quotas[c][1] < class_sizes[c] {
                quotas[c][slot] += 1;
                bumped[c] = true;
                deficit -= 1;
            }
        }
    }

    for (c, &n) in class_sizes.iter().enumerate() {
        quotas[c][2] = n - quotas[c][0] - quotas[c][1];
    }
    Ok(quotas)
}

fn stratified_membership(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeMap<String, Partition>> {
    let sizes: Vec<usize> = ClassLabel::ALL.iter().map(|&c| manifest.count(c)).collect();
    let quotas = stratum_quotas(&sizes, ratios)?;
    let mut membership = BTreeMap::new();
    for (c, label) in ClassLabel::ALL.iter().enumerate() {
        // records are sorted by tile_id, so the pre-shuffle order is canonical
        let mut ids: Vec<&str> = manifest
            .records()
            .iter()
            .filter(|r| r.label == *label)
            .map(|r| r.tile_id.as_str())
            .collect();
        ids.shuffle(rng);
        let [n_train, n_val, _] = quotas[c];
        for (i, id) in ids.into_iter().enumerate() {
            let p = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
            membership.insert(id.to_string(), p);
        }
    }
    Ok(membership)
}

fn grouped_membership(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeMap<String, Partition>> {
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for r in manifest.records() {
        let key = match &r.source_wsi_id {
            Some(wsi) => format!("wsi:{wsi}"),
            None => format!("tile:{}", r.tile_id),
        };
        groups.entry(key).or_default().push(r.tile_id.as_str());
    }
    let mut groups: Vec<Vec<&str>> = groups.into_values().collect();
    groups.shuffle(rng);

    let total = manifest.len();
    let targets = [
        floor_share(total, ratios.train),
        floor_share(total, ratios.val),
    ];
    let mut filled = [0usize; 3];
    let mut membership = BTreeMap::new();
    for group in groups {
        let p = if filled[0] < targets[0] {
            Partition::Train
        } else if filled[1] < targets[1] {
            Partition::Val
        } else {
            Partition::Test
        };
        filled[p.slot()] += group.len();
        for id in group {
            membership.insert(id.to_string(), p);
        }
    }
    if let Some(p) = Partition::ALL.iter().find(|p| filled[p.slot()] == 0) {
        return Err(Error::Split(format!(
            "grouping by slide left the {p:?} partition empty"
        )));
    }
    Ok(membership)
}
