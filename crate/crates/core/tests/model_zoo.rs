use std::collections::HashMap;

use candle_core::{Device, Tensor};
use histo_tl::model::{
    build_model, load_checkpoint, read_checkpoint_config, save_checkpoint, Backbone, ModelConfig, ModelHandle,
    WeightSource,
};
use histo_tl::pipeline::{AugmentConfig, BatchStream, ImageTensor, Sample, StreamMode};
use histo_tl::task::TaskName;
use histo_tl::train::{tensor_values, train, TrainConfig, TrainOptions};
use histo_tl::Error;

const DEV: Device = Device::Cpu;

fn random_model(cfg: &ModelConfig, seed: u64) -> ModelHandle {
    build_model(cfg, &WeightSource::Random { seed }, &DEV).unwrap()
}

fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * 3 * h * w).map(|_| rng.random::<f32>()).collect();
    Tensor::from_vec(data, (n, 3, h, w), &DEV).unwrap()
}

fn assert_probability_rows(probs: &Tensor, n: usize, k: usize) {
    assert_eq!(probs.dims(), &[n, k]);
    for row in probs.to_vec2::<f32>().unwrap() {
        assert!(row.iter().all(|p| (0.0..=1.0).contains(p)), "{row:?}");
        let sum: f32 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5, "row sums to {sum}");
    }
}

#[test]
fn every_backbone_accepts_the_same_head() {
    for backbone in Backbone::ALL {
        let side = backbone.min_input_size().max(32);
        for n_classes in [2, 3] {
            let cfg = ModelConfig::new(backbone, n_classes).with_input_size(side, side);
            let model = random_model(&cfg, 1);
            let x = random_batch(2, side, side, 3);
            let features = model.features(&x).unwrap();
            assert_eq!(features.dims(), &[2, backbone.feature_len(side, side)], "{backbone}");
            assert_probability_rows(&model.forward(&x).unwrap(), 2, n_classes);
        }
    }
}

#[test]
fn parameter_counts_match_reference_architectures() {
    // Backbone tensors of the reference implementations, batch-norm running
    // statistics included.
    let expected = [
        (Backbone::VGG16, 14_714_688),
        (Backbone::VGG19, 20_024_384),
        (Backbone::ResNet50, 23_561_152),
        (Backbone::InceptionV3, 21_820_000),
        (Backbone::DenseNet201, 18_321_984),
        (Backbone::NASNetLarge, 84_916_818),
    ];
    for (backbone, count) in expected {
        let cfg = ModelConfig::new(backbone, 3).with_input_size(96, 96);
        let c = random_model(&cfg, 0).parameter_counts();
        assert_eq!(c.backbone_params, count, "{backbone}");
        let f = cfg.feature_len();
        assert_eq!(c.head_params, f * 512 + 512 + 512 * 1024 + 1024 + 1024 * 3 + 3, "{backbone}");
        assert_eq!(c.trainable_params, c.head_params, "{backbone}");
    }
}

#[test]
fn fine_tuning_unfreezes_the_backbone() {
    let mut cfg = ModelConfig::new(Backbone::VGG16, 2).with_input_size(32, 32);
    cfg.freeze_backbone = false;
    let c = random_model(&cfg, 0).parameter_counts();
    assert_eq!(c.trainable_params, c.backbone_params + c.head_params);
}

#[test]
fn vgg19_head_at_full_resolution() {
    let cfg = ModelConfig::new(Backbone::VGG19, 3);
    assert_eq!(cfg.feature_len(), 11 * 11 * 512);
    assert_eq!(cfg.feature_len(), 61_952);
    let model = random_model(&cfg, 0);
    let fc1: usize = model
        .named_params()
        .iter()
        .filter(|p| p.name.starts_with("head.fc1."))
        .map(|p| p.tensor.elem_count())
        .sum();
    assert_eq!(fc1, 61_952 * 512 + 512);
}

#[test]
fn unknown_backbone_is_a_registry_error() {
    assert!(matches!("AlexNet".parse::<Backbone>(), Err(Error::Registry(_))));
    assert_eq!("vgg19".parse::<Backbone>().unwrap(), Backbone::VGG19);
}

#[test]
fn missing_pretrained_weights_fail_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::new(Backbone::VGG16, 2).with_input_size(32, 32);
    let source = WeightSource::pretrained_in(dir.path(), Backbone::VGG16, 0);
    assert!(matches!(build_model(&cfg, &source, &DEV), Err(Error::WeightLoad(_))));

    // A file lacking one tensor is rejected as well.
    let model = random_model(&cfg, 5);
    let mut tensors: HashMap<String, Tensor> = backbone_tensors(&model);
    tensors.remove("features.0.bias");
    candle_core::safetensors::save(&tensors, dir.path().join("VGG16.safetensors")).unwrap();
    assert!(matches!(build_model(&cfg, &source, &DEV), Err(Error::WeightLoad(_))));
}

fn backbone_tensors(model: &ModelHandle) -> HashMap<String, Tensor> {
    model
        .named_params()
        .iter()
        .filter(|p| p.is_backbone())
        .map(|p| (p.name.trim_start_matches("backbone.").to_string(), p.tensor.clone()))
        .collect()
}

#[test]
fn pretrained_file_reproduces_the_exported_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::new(Backbone::ResNet50, 2).with_input_size(32, 32);
    let original = random_model(&cfg, 9);
    candle_core::safetensors::save(&backbone_tensors(&original), dir.path().join("ResNet50.safetensors")).unwrap();
    let loaded = build_model(&cfg, &WeightSource::pretrained_in(dir.path(), Backbone::ResNet50, 9), &DEV).unwrap();
    let x = random_batch(2, 32, 32, 1);
    let a = original.features(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let b = loaded.features(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    let cfg = ModelConfig::new(Backbone::VGG16, 3).with_input_size(32, 32);
    let model = random_model(&cfg, 4);
    save_checkpoint(&model, &path).unwrap();
    assert_eq!(read_checkpoint_config(&path).unwrap(), cfg);
    let loaded = load_checkpoint(&path, Some(&cfg), &DEV).unwrap();
    let x = random_batch(3, 32, 32, 2);
    let a = model.forward(&x).unwrap().to_vec2::<f32>().unwrap();
    let b = loaded.forward(&x).unwrap().to_vec2::<f32>().unwrap();
    let diff = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0_f32, f32::max);
    assert!(diff < 1e-6, "max difference {diff}");
}

#[test]
fn checkpoint_with_other_class_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    let cfg = ModelConfig::new(Backbone::VGG16, 2).with_input_size(32, 32);
    save_checkpoint(&random_model(&cfg, 0), &path).unwrap();
    let three = ModelConfig::new(Backbone::VGG16, 3).with_input_size(32, 32);
    assert!(matches!(load_checkpoint(&path, Some(&three), &DEV), Err(Error::Checkpoint(_))));
}

#[test]
fn corrupt_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    std::fs::write(&path, b"definitely not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path, None, &DEV), Err(Error::Checkpoint(_))));

    let cfg = ModelConfig::new(Backbone::VGG16, 2).with_input_size(32, 32);
    save_checkpoint(&random_model(&cfg, 0), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path, None, &DEV), Err(Error::Checkpoint(_))));
    assert!(matches!(
        load_checkpoint(&dir.path().join("absent"), None, &DEV),
        Err(Error::Io { .. })
    ));
}

#[test]
fn frozen_backbone_step_changes_only_the_head() {
    let cfg = ModelConfig::new(Backbone::VGG16, 2).with_input_size(32, 32);
    let mut model = random_model(&cfg, 2);
    let samples: Vec<Sample> = (0..4)
        .map(|i| {
            let v = if i % 2 == 0 { 0.1 } else { 0.9 };
            Sample::in_memory(format!("t{i}"), ImageTensor::filled(32, 32, [v, v, v]), i % 2)
        })
        .collect();
    let stream = |mode| {
        BatchStream::new(samples.clone(), 4, mode, AugmentConfig::identity())
            .unwrap()
            .with_input_size(32, 32)
    };
    let before = tensor_values(&model).unwrap();
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let record = train(
        &mut model,
        &TaskName::NctVsVt.spec(),
        &stream(StreamMode::Train),
        &stream(StreamMode::Eval),
        &cfg,
        TrainOptions::default(),
    )
    .unwrap();
    assert_eq!(record.epoch_history.len(), 1);
    let after = tensor_values(&model).unwrap();
    let mut head_changed = 0;
    for (name, value) in &before {
        if name.starts_with("backbone.") {
            assert_eq!(value, &after[name], "{name} moved");
        } else if value != &after[name] {
            head_changed += 1;
        }
    }
    assert!(head_changed > 0);
}
