use candle_core::Device;
use histo_tl::model::{build_model, load_checkpoint, Backbone, ModelConfig, ModelHandle, WeightSource};
use histo_tl::pipeline::{AugmentConfig, BatchStream, ImageTensor, Sample, StreamMode};
use histo_tl::task::{TaskName, TaskSpec};
use histo_tl::train::{
    argmax, evaluate, predict, select_loss, train, FeatureCache, LossKind, StopReason, TrainConfig, TrainOptions,
    TrainRunRecord,
};
use histo_tl::Error;

const SIDE: usize = 32;
const COLORS: [[f32; 3]; 3] = [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]];

fn colored_samples(per_class: usize, n_classes: usize) -> Vec<Sample> {
    (0..per_class * n_classes)
        .map(|i| {
            let c = i % n_classes;
            Sample::in_memory(format!("c{c}-{i:03}"), ImageTensor::filled(SIDE, SIDE, COLORS[c]), c)
        })
        .collect()
}

fn streams(samples: &[Sample], batch: usize) -> (BatchStream, BatchStream) {
    let mk = |mode| {
        BatchStream::new(samples.to_vec(), batch, mode, AugmentConfig::identity())
            .unwrap()
            .with_input_size(SIDE, SIDE)
    };
    (mk(StreamMode::Train), mk(StreamMode::Eval))
}

fn model(n_classes: usize, seed: u64) -> ModelHandle {
    let cfg = ModelConfig::new(Backbone::VGG16, n_classes).with_input_size(SIDE, SIDE);
    build_model(&cfg, &WeightSource::Random { seed }, &Device::Cpu).unwrap()
}

fn run(n_classes: usize, cfg: &TrainConfig, opts: TrainOptions<'_>) -> (ModelHandle, TrainRunRecord) {
    let task = if n_classes == 3 { TaskName::Multiclass } else { TaskName::NctVsVt };
    let (tr, va) = streams(&colored_samples(4, n_classes), 6);
    let mut m = model(n_classes, 0);
    let record = train(&mut m, &task.spec(), &tr, &va, cfg, opts).unwrap();
    (m, record)
}

#[test]
fn loss_follows_task_arity() {
    assert_eq!(select_loss(&TaskName::Multiclass.spec()).unwrap(), LossKind::CategoricalCrossEntropy);
    for t in TaskName::BINARY {
        assert_eq!(select_loss(&t.spec()).unwrap(), LossKind::BinaryCrossEntropy);
    }
    let mut odd: TaskSpec = TaskName::Multiclass.spec();
    odd.n_classes = 4;
    assert!(matches!(select_loss(&odd), Err(Error::Config(_))));
}

#[test]
fn zero_threshold_stops_after_one_epoch() {
    let cfg = TrainConfig {
        early_stop_val_acc: 0.0,
        max_epochs: 50,
        ..TrainConfig::default()
    };
    let (_, r) = run(3, &cfg, TrainOptions::default());
    assert_eq!(r.stop_reason, StopReason::EarlyStop);
    assert_eq!(r.epoch_history.len(), 1);
    assert!(r.epoch_history[0].val_acc > 0.0);
}

#[test]
fn unreachable_threshold_runs_to_the_epoch_limit() {
    let cfg = TrainConfig {
        early_stop_val_acc: 1.0,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let (_, r) = run(2, &cfg, TrainOptions::default());
    assert_eq!(r.stop_reason, StopReason::MaxEpochs);
    let epochs: Vec<usize> = r.epoch_history.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3]);
}

#[test]
fn early_stop_fires_on_the_first_epoch_above_threshold() {
    let cfg = TrainConfig {
        learning_rate: 0.001,
        early_stop_val_acc: 0.9,
        max_epochs: 60,
        ..TrainConfig::default()
    };
    let (_, r) = run(3, &cfg, TrainOptions::default());
    assert_eq!(r.stop_reason, StopReason::EarlyStop);
    let (last, before) = r.epoch_history.split_last().unwrap();
    assert!(last.val_acc > 0.9);
    assert!(before.iter().all(|e| e.val_acc <= 0.9));
}

#[test]
fn best_epoch_is_restored_and_checkpointed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.safetensors");
    let cfg = TrainConfig {
        early_stop_val_acc: 1.0,
        max_epochs: 4,
        ..TrainConfig::default()
    };
    let opts = TrainOptions {
        run_id: "best".into(),
        checkpoint_path: Some(path.clone()),
        feature_cache: None,
    };
    let (m, r) = run(3, &cfg, opts);
    let best = r.best_epoch.unwrap();
    let best_acc = r.best_val_acc.unwrap();
    let max = r.epoch_history.iter().map(|e| e.val_acc).fold(f64::MIN, f64::max);
    assert_eq!(best_acc, max);
    assert_eq!(r.epoch_history.iter().position(|e| e.val_acc == max).unwrap() + 1, best);
    assert_eq!(r.checkpoint_path.as_deref(), Some(path.as_path()));

    let (_, va) = streams(&colored_samples(4, 3), 6);
    let now = evaluate(&m, &va, None).unwrap();
    assert_eq!(now.accuracy, best_acc);
    let reloaded = load_checkpoint(&path, Some(m.config()), &Device::Cpu).unwrap();
    assert_eq!(predict(&reloaded, &va, None).unwrap(), predict(&m, &va, None).unwrap());
}

#[test]
fn training_is_reproducible() {
    let cfg = TrainConfig {
        early_stop_val_acc: 1.0,
        max_epochs: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let (_, a) = run(2, &cfg, TrainOptions::default());
    let (_, b) = run(2, &cfg, TrainOptions::default());
    assert_eq!(a.epoch_history, b.epoch_history);
}

#[test]
fn shared_feature_cache_gives_identical_results() {
    let cfg = TrainConfig {
        early_stop_val_acc: 1.0,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let cache = FeatureCache::new();
    let (_, a) = run(3, &cfg, TrainOptions::default());
    let (_, b) = run(
        3,
        &cfg,
        TrainOptions {
            feature_cache: Some(&cache),
            ..TrainOptions::default()
        },
    );
    assert_eq!(a.epoch_history, b.epoch_history);
    assert_eq!(cache.len(), 12);
}

#[test]
fn non_finite_loss_is_recorded_as_an_error() {
    let cfg = TrainConfig {
        learning_rate: 1e30,
        early_stop_val_acc: 1.0,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let (_, r) = run(3, &cfg, TrainOptions::default());
    assert_eq!(r.stop_reason, StopReason::Error);
    let failed = r.failed_epoch.unwrap();
    assert_eq!(r.epoch_history.len(), failed - 1);
    assert!(r.error.unwrap().contains("non-finite"));
}

#[test]
fn prediction_rows_follow_the_stream() {
    let m = model(3, 1);
    let samples = colored_samples(3, 3);
    let (_, eval) = streams(&samples, 4);
    let p = predict(&m, &eval, None).unwrap();
    assert_eq!(p.len(), 9);
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(p.ids, ids);
    assert_eq!(p.true_class, samples.iter().map(|s| s.target).collect::<Vec<_>>());
    for (row, &pred) in p.probabilities.iter().zip(&p.predicted_class) {
        assert_eq!(argmax(row), pred);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
    assert_eq!(predict(&m, &eval, None).unwrap(), p);
}

#[test]
fn prediction_rejects_arity_mismatch() {
    let m = model(2, 1);
    let (_, eval) = streams(&colored_samples(2, 3), 4);
    assert!(matches!(predict(&m, &eval, None), Err(Error::Prediction(_))));
}

#[test]
fn augmented_training_bypasses_the_cache() {
    let samples = colored_samples(3, 3);
    let train_stream = BatchStream::new(samples.clone(), 5, StreamMode::Train, AugmentConfig::default())
        .unwrap()
        .with_input_size(SIDE, SIDE);
    let (_, val) = streams(&samples, 5);
    let cache = FeatureCache::new();
    let mut m = model(3, 0);
    let cfg = TrainConfig {
        early_stop_val_acc: 1.0,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let opts = TrainOptions {
        feature_cache: Some(&cache),
        ..TrainOptions::default()
    };
    let r = train(&mut m, &TaskName::Multiclass.spec(), &train_stream, &val, &cfg, opts).unwrap();
    assert_eq!(r.epoch_history.len(), 2);
    // Only the un-augmented validation pass is cached.
    assert_eq!(cache.len(), 9);
}

#[test]
fn run_record_round_trips_through_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        early_stop_val_acc: 1.0,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let (_, r) = run(2, &cfg, TrainOptions::default());
    let json = dir.path().join("run.json");
    r.save(&json).unwrap();
    assert_eq!(TrainRunRecord::load(&json).unwrap(), r);
    let text = std::fs::read_to_string(&json).unwrap();
    assert!(text.contains("\"stop_reason\": \"max_epochs\""));
    assert!(text.contains("\"beta_2\": 0.999"));

    let csv = dir.path().join("history.csv");
    r.write_history_csv(&csv).unwrap();
    let lines: Vec<String> = std::fs::read_to_string(&csv).unwrap().lines().map(str::to_string).collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
}
