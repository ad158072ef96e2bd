//! Tile dataset ingestion.
//!
//! Two on-disk layouts are understood: a CSV manifest with the header
//! `tile_id,image_path,label` (an optional fourth `source_wsi_id` column is
//! accepted) and a folder-per-class tree whose subdirectories are named after
//! the class labels. Either way the result is a [`DatasetManifest`] sorted by
//! `tile_id`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE_NAME: &str = "manifest.csv";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Tissue class of a tile. The integer encoding is fixed: NT=0, NCT=1, VT=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "NT")]
    NonTumor,
    #[serde(rename = "NCT")]
    NecroticTumor,
    #[serde(rename = "VT")]
    ViableTumor,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::NonTumor,
        ClassLabel::NecroticTumor,
        ClassLabel::ViableTumor,
    ];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::NonTumor => 0,
            ClassLabel::NecroticTumor => 1,
            ClassLabel::ViableTumor => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            ClassLabel::NonTumor => "NT",
            ClassLabel::NecroticTumor => "NCT",
            ClassLabel::ViableTumor => "VT",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    /// Case-insensitive; accepts the short codes plus the long-form names used
    /// by the public release (`Non-Tumor`, `Viable`, `Non-Viable-Tumor`, ...).
    fn from_str(s: &str) -> Result<Self> {
        let normalized: String = s
            .trim()
            .chars()
            .map(|c| match c {
                '_' | ' ' => '-',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        match normalized.as_str() {
            "nt" | "non-tumor" | "nontumor" | "non-tumour" => Ok(ClassLabel::NonTumor),
            "nct" | "necrotic" | "necrotic-tumor" | "necrosis" | "non-viable-tumor"
            | "non-viable" | "nonviable" => Ok(ClassLabel::NecroticTumor),
            "vt" | "viable" | "viable-tumor" | "viable-tumour" => Ok(ClassLabel::ViableTumor),
            _ => Err(Error::Label(s.to_string())),
        }
    }
}

/// One labelled tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile_id: String,
    pub image_path: PathBuf,
    pub label: ClassLabel,
    pub source_wsi_id: Option<String>,
    pub width_px: u32,
    pub height_px: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<TileRecord>,
    class_counts: BTreeMap<ClassLabel, usize>,
}

impl DatasetManifest {
    /// Validates uniqueness of tile ids, sorts by tile id and recounts classes.
    pub fn new(mut records: Vec<TileRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Integrity("no records found".into()));
        }
        records.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
        if let Some(dup) = records.windows(2).find(|w| w[0].tile_id == w[1].tile_id) {
            return Err(Error::Integrity(format!(
                "duplicate tile_id {:?}",
                dup[0].tile_id
            )));
        }
        let mut class_counts: BTreeMap<ClassLabel, usize> =
            ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
        for r in &records {
            *class_counts.entry(r.label).or_default() += 1;
        }
        Ok(Self {
            records,
            class_counts,
        })
    }

    pub fn records(&self) -> &[TileRecord] {
        &self.records
    }

    pub fn class_counts(&self) -> &BTreeMap<ClassLabel, usize> {
        &self.class_counts
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, tile_id: &str) -> Option<&TileRecord> {
        self.records
            .binary_search_by(|r| r.tile_id.as_str().cmp(tile_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Writes the manifest as CSV with absolute image paths.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tile_id", "image_path", "label", "source_wsi_id"])?;
        for r in &self.records {
            let image_path = fs::canonicalize(&r.image_path).unwrap_or_else(|_| r.image_path.clone());
            w.write_record([
                r.tile_id.as_str(),
                &image_path.to_string_lossy(),
                r.label.code(),
                r.source_wsi_id.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    CsvManifest,
    FolderPerClass,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_manifest" | "csv" => Ok(Layout::CsvManifest),
            "folder_per_class" | "folders" => Ok(Layout::FolderPerClass),
            other => Err(Error::Config(format!("unknown dataset layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub layout: Layout,
    /// When set, every tile must have exactly these (width, height) dimensions.
    pub expected_size: Option<(u32, u32)>,
}

pub fn load_manifest(root: &Path, layout: Layout) -> Result<DatasetManifest> {
    load_manifest_with(
        root,
        &LoadOptions {
            layout,
            expected_size: None,
        },
    )
}

pub fn load_manifest_with(root: &Path, opts: &LoadOptions) -> Result<DatasetManifest> {
    if !root.exists() {
        return Err(Error::Ingestion {
            path: root.to_path_buf(),
            message: "path does not exist".into(),
        });
    }
    let records = match opts.layout {
        Layout::CsvManifest => read_csv_records(root)?,
        Layout::FolderPerClass => read_folder_records(root)?,
    };
    let records = records
        .into_iter()
        .map(|r| probe_dimensions(r, opts.expected_size))
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(records)
}

struct RawRecord {
    tile_id: String,
    image_path: PathBuf,
    label: ClassLabel,
    source_wsi_id: Option<String>,
}

#[derive(Deserialize)]
struct CsvRow {
    tile_id: String,
    image_path: String,
    label: String,
    #[serde(default)]
    source_wsi_id: Option<String>,
}

fn read_csv_records(root: &Path) -> Result<Vec<RawRecord>> {
    let csv_path = if root.is_dir() {
        root.join(MANIFEST_FILE_NAME)
    } else {
        root.to_path_buf()
    };
    if !csv_path.is_file() {
        return Err(Error::Ingestion {
            path: csv_path,
            message: "manifest CSV not found".into(),
        });
    }
    let base = csv_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&csv_path)
        .map_err(|e| Error::Ingestion {
            path: csv_path.clone(),
            message: e.to_string(),
        })?;
    let headers = reader.headers()?.clone();
    for required in ["tile_id", "image_path", "label"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Ingestion {
                path: csv_path.clone(),
                message: format!("missing header column {required:?}"),
            });
        }
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::Ingestion {
            path: csv_path.clone(),
            message: e.to_string(),
        })?;
        out.push(RawRecord {
            tile_id: row.tile_id,
            image_path: base.join(row.image_path),
            label: row.label.parse()?,
            source_wsi_id: row.source_wsi_id.filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

fn read_folder_records(root: &Path) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let label: ClassLabel = name.parse()?;
        let files = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for file in files {
            let path = file.map_err(|e| Error::io(&dir, e))?.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if !is_image {
                continue;
            }
            let tile_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push(RawRecord {
                tile_id,
                image_path: path,
                label,
                source_wsi_id: None,
            });
        }
    }
    Ok(out)
}

fn probe_dimensions(raw: RawRecord, expected: Option<(u32, u32)>) -> Result<TileRecord> {
    if !raw.image_path.is_file() {
        return Err(Error::Ingestion {
            path: raw.image_path,
            message: "image file not found".into(),
        });
    }
    let (width_px, height_px) =
        image::image_dimensions(&raw.image_path).map_err(|e| Error::Ingestion {
            path: raw.image_path.clone(),
            message: e.to_string(),
        })?;
    if width_px == 0 || height_px == 0 {
        return Err(Error::Ingestion {
            path: raw.image_path,
            message: "zero-area image".into(),
        });
    }
    if let Some((w, h)) = expected {
        if (width_px, height_px) != (w, h) {
            return Err(Error::Ingestion {
                path: raw.image_path,
                message: format!("expected {w}x{h} tile, found {width_px}x{height_px}"),
            });
        }
    }
    Ok(TileRecord {
        tile_id: raw.tile_id,
        image_path: raw.image_path,
        label: raw.label,
        source_wsi_id: raw.source_wsi_id,
        width_px,
        height_px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, size: u32, rgb: [u8; 3]) {
        image::RgbImage::from_pixel(size, size, image::Rgb(rgb))
            .save(path)
            .unwrap();
    }

    fn six_image_fixture(dir: &Path) -> PathBuf {
        let mut csv = String::from("tile_id,image_path,label\n");
        for (i, label) in ["NT", "NT", "NCT", "NCT", "VT", "VT"].iter().enumerate() {
            let name = format!("img{i}.png");
            write_png(&dir.join(&name), 8, [i as u8 * 40, 0, 0]);
            csv.push_str(&format!("t{i},{name},{label}\n"));
        }
        let path = dir.join("manifest.csv");
        fs::write(&path, csv).unwrap();
        path
    }

    #[test]
    fn label_codes_are_stable() {
        assert_eq!(ClassLabel::NonTumor.index(), 0);
        assert_eq!(ClassLabel::NecroticTumor.index(), 1);
        assert_eq!(ClassLabel::ViableTumor.index(), 2);
        for c in ClassLabel::ALL {
            assert_eq!(ClassLabel::from_index(c.index()), Some(c));
        }
    }

    #[test]
    fn label_aliases_are_case_insensitive() {
        assert_eq!("Non-Tumor".parse::<ClassLabel>().unwrap(), ClassLabel::NonTumor);
        assert_eq!("VIABLE".parse::<ClassLabel>().unwrap(), ClassLabel::ViableTumor);
        assert_eq!("necrotic".parse::<ClassLabel>().unwrap(), ClassLabel::NecroticTumor);
        assert_eq!(
            "non_viable_tumor".parse::<ClassLabel>().unwrap(),
            ClassLabel::NecroticTumor
        );
        assert!(matches!("stroma".parse::<ClassLabel>(), Err(Error::Label(_))));
    }

    #[test]
    fn csv_fixture_counts_by_class() {
        let dir = tempfile::tempdir().unwrap();
        let csv = six_image_fixture(dir.path());
        let m = load_manifest(&csv, Layout::CsvManifest).unwrap();
        assert_eq!(m.len(), 6);
        for c in ClassLabel::ALL {
            assert_eq!(m.count(c), 2);
        }
        // directory root resolves manifest.csv inside it
        let m2 = load_manifest(dir.path(), Layout::CsvManifest).unwrap();
        assert_eq!(m, m2);
        assert_eq!(m.records()[0].width_px, 8);
    }

    #[test]
    fn folder_layout_counts_by_class() {
        let dir = tempfile::tempdir().unwrap();
        for (label, n) in [("NT", 2), ("necrotic", 2), ("Viable", 2)] {
            let sub = dir.path().join(label);
            fs::create_dir(&sub).unwrap();
            for i in 0..n {
                write_png(&sub.join(format!("{label}_{i}.png")), 4, [0, 0, 0]);
            }
        }
        fs::write(dir.path().join("NT").join("notes.txt"), "ignored").unwrap();
        let m = load_manifest(dir.path(), Layout::FolderPerClass).unwrap();
        assert_eq!(m.class_counts().values().copied().collect::<Vec<_>>(), vec![2, 2, 2]);
        let ids: Vec<_> = m.records().iter().map(|r| r.tile_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn empty_directory_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(dir.path(), Layout::FolderPerClass).unwrap_err();
        assert!(matches!(err, Error::Integrity(ref m) if m == "no records found"), "{err}");
    }

    #[test]
    fn missing_image_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("manifest.csv");
        fs::write(&csv, "tile_id,image_path,label\na,missing.png,NT\n").unwrap();
        match load_manifest(&csv, Layout::CsvManifest).unwrap_err() {
            Error::Ingestion { path, .. } => assert!(path.ends_with("missing.png")),
            other => panic!("unexpected {other}"),
        }
        let err = load_manifest(&dir.path().join("nope"), Layout::CsvManifest).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn unknown_label_and_duplicates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"), 4, [0, 0, 0]);
        let csv = dir.path().join("manifest.csv");
        fs::write(&csv, "tile_id,image_path,label\na,a.png,stroma\n").unwrap();
        assert!(matches!(
            load_manifest(&csv, Layout::CsvManifest),
            Err(Error::Label(_))
        ));
        fs::write(&csv, "tile_id,image_path,label\na,a.png,NT\na,a.png,VT\n").unwrap();
        assert!(matches!(
            load_manifest(&csv, Layout::CsvManifest),
            Err(Error::Integrity(_))
        ));
        fs::write(&csv, "tile,image_path,label\na,a.png,NT\n").unwrap();
        assert!(matches!(
            load_manifest(&csv, Layout::CsvManifest),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn expected_size_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let csv = six_image_fixture(dir.path());
        let opts = LoadOptions {
            layout: Layout::CsvManifest,
            expected_size: Some((1024, 1024)),
        };
        assert!(matches!(
            load_manifest_with(&csv, &opts),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn written_csv_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let csv = six_image_fixture(dir.path());
        let m = load_manifest(&csv, Layout::CsvManifest).unwrap();
        let out = tempfile::tempdir().unwrap();
        let out_csv = out.path().join("manifest.csv");
        m.write_csv(&out_csv).unwrap();
        let again = load_manifest(&out_csv, Layout::CsvManifest).unwrap();
        assert_eq!(again.len(), m.len());
        for (a, b) in again.records().iter().zip(m.records()) {
            assert_eq!(a.tile_id, b.tile_id);
            assert_eq!(a.label, b.label);
            assert_eq!(
                fs::canonicalize(&a.image_path).unwrap(),
                fs::canonicalize(&b.image_path).unwrap()
            );
        }
    }
}
