use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_histo-tl");

fn write_tiles(root: &Path) {
    for (class, rgb) in [("NT", [210u8, 80, 80]), ("NCT", [80, 210, 80]), ("VT", [80, 80, 210])] {
        let dir = root.join(class);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..10u8 {
            let img = image::RgbImage::from_pixel(36, 36, image::Rgb([rgb[0] - i, rgb[1] - i, rgb[2] - i]));
            img.save(dir.join(format!("{class}-{i}.png"))).unwrap();
        }
    }
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(random_weights: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_tiles(&dir.path().join("tiles"));
        let config = format!(
            r#"
results_dir = "results"
tasks = ["NT_vs_REST", "NCT_vs_NT", "VT_vs_NT", "NCT_vs_VT", "MULTICLASS"]

[dataset]
root = "tiles"
layout = "folder_per_class"

[weights]
random_init = {random_weights}
dir = "weights"

[[models]]
backbone = "VGG16"
input_size = [32, 32, 3]

[[models]]
backbone = "ResNet50"
input_size = [32, 32, 3]

[train]
max_epochs = 2
early_stop_val_acc = 1.0

[train.batch_sizes]
train = 8
val = 4
test = 4

[augment]
rotation_max_deg = 0.0
width_shift_frac = 0.0
height_shift_frac = 0.0
horizontal_flip = true
vertical_flip = false
"#
        );
        fs::write(dir.path().join("plan.toml"), config).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("plan.toml")
    }

    fn results(&self) -> PathBuf {
        self.dir.path().join("results")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .arg("--config")
            .arg(self.config())
            .args(args)
            .env_remove("HISTO_TL_RESULTS")
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prepare_reports_counts_and_is_repeatable() {
    let ws = Workspace::new(true);
    let out = ws.run(&["prepare"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("tiles: 30"), "{text}");
    assert!(text.contains("partitions: train 21, val 3, test 6"), "{text}");
    let split = fs::read(ws.results().join("split.json")).unwrap();
    assert_eq!(ws.run(&["prepare"]).status.code(), Some(0));
    assert_eq!(fs::read(ws.results().join("split.json")).unwrap(), split);
}

#[test]
fn missing_dataset_root_exits_with_status_two() {
    let ws = Workspace::new(true);
    fs::remove_dir_all(ws.dir.path().join("tiles")).unwrap();
    let out = ws.run(&["prepare"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tiles"), "{}", stderr(&out));
}

#[test]
fn bad_config_exits_with_status_two() {
    let ws = Workspace::new(true);
    fs::write(ws.config(), "[dataset]\nroot = 3\n").unwrap();
    assert_eq!(ws.run(&["prepare"]).status.code(), Some(2));
    let out = Command::new(BIN).args(["--config", "/no/such/plan.toml", "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_before_prepare_is_a_configuration_error() {
    let ws = Workspace::new(true);
    let out = ws.run(&["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("prepare"));
}

#[test]
fn run_report_inspect_cycle() {
    let ws = Workspace::new(true);
    assert_eq!(ws.run(&["prepare"]).status.code(), Some(0));
    let out = ws.run(&["run", "--task", "MULTICLASS", "--model", "VGG16,ResNet50"]);
    assert_eq!(out.status.code(), Some(0), "{}\n{}", stdout(&out), stderr(&out));
    let runs: Vec<String> = fs::read_dir(ws.results())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(runs.len(), 2, "{runs:?}");
    assert!(runs.contains(&"MULTICLASS__ResNet50__seed0".to_string()));

    let again = ws.run(&["run", "--task", "MULTICLASS", "--model", "VGG16,ResNet50"]);
    assert_eq!(again.status.code(), Some(0));
    assert!(stdout(&again).contains("0 trained, 2 skipped, 0 failed"), "{}", stdout(&again));

    // The matrix has ten cells, so the report lists eight as missing.
    let report = ws.run(&["report"]);
    assert_eq!(report.status.code(), Some(1), "{}", stderr(&report));
    let text = stdout(&report);
    assert!(text.contains("NT_vs_REST__VGG16__seed0"), "{text}");
    let report_dir = ws.results().join("report");
    for file in ["backbone_comparison.csv", "per_class_metrics.csv", "tumor_type_aggregate.csv", "accuracy.svg"] {
        assert!(report_dir.join(file).is_file(), "{file}");
    }
    let table = fs::read_to_string(report_dir.join("backbone_comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let inspect = ws.run(&["inspect", "MULTICLASS__VGG16__seed0"]);
    assert_eq!(inspect.status.code(), Some(0));
    assert!(stdout(&inspect).contains("stopped:      MaxEpochs after 2 epochs"), "{}", stdout(&inspect));
    assert_eq!(ws.run(&["inspect", "nope"]).status.code(), Some(2));

    // Without a config the results directory comes from the environment and
    // the grid from what is on disk.
    let out = Command::new(BIN)
        .arg("report")
        .env("HISTO_TL_RESULTS", ws.results())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stdout(&out).contains("MULTICLASS"));
}

#[test]
fn seed_flag_names_the_runs() {
    let ws = Workspace::new(true);
    assert_eq!(ws.run(&["prepare"]).status.code(), Some(0));
    let out = ws.run(&["--seed", "7", "run", "--task", "NCT_vs_VT", "--model", "VGG16"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(ws.results().join("NCT_vs_VT__VGG16__seed7").join("roc.csv").is_file());
}

#[test]
fn failed_runs_exit_with_status_one() {
    let ws = Workspace::new(false);
    assert_eq!(ws.run(&["prepare"]).status.code(), Some(0));
    let out = ws.run(&["run", "--task", "VT_vs_NT", "--model", "VGG16"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAILED"));
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.results().join("VT_vs_NT__VGG16__seed0/run.json")).unwrap())
            .unwrap();
    assert_eq!(run["stop_reason"], "error");
}

#[test]
fn unknown_filters_are_rejected() {
    let ws = Workspace::new(true);
    assert_eq!(ws.run(&["prepare"]).status.code(), Some(0));
    assert_eq!(ws.run(&["run", "--model", "DenseNet201"]).status.code(), Some(2));
    let out = ws.run(&["run", "--task", "NT_vs_VT"]);
    assert_eq!(out.status.code(), Some(2));
}
