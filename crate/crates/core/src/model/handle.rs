use std::collections::HashMap;
use std::sync::Arc;

use candle_core::{Device, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbones::{self, FeatureExtractor};
use super::head::Head;
use super::params::{read_safetensors, var_builder, NamedParam, ParamStore, Required, BACKBONE_PREFIX, HEAD_PREFIX};
use super::{ModelConfig, WeightSource};
use crate::error::{Error, Result};

/// Images pushed through the backbone at once; bounds peak memory at the
/// full input resolution.
const BACKBONE_CHUNK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    /// All backbone tensors, including batch-norm running statistics.
    pub backbone_params: usize,
    pub head_params: usize,
    pub trainable_params: usize,
}

/// A built network: backbone, head and the tensors behind them.
pub struct ModelHandle {
    config: ModelConfig,
    backbone: Box<dyn FeatureExtractor>,
    head: Head,
    params: Vec<NamedParam>,
    device: Device,
    backbone_weights: String,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("config", &self.config)
            .field("backbone_weights", &self.backbone_weights)
            .field("parameter_counts", &self.parameter_counts())
            .finish()
    }
}

/// Builds the network for `cfg`, drawing backbone weights from `source`.
pub fn build_model(cfg: &ModelConfig, source: &WeightSource, device: &Device) -> Result<ModelHandle> {
    cfg.validate()?;
    let (loaded, required) = match source {
        WeightSource::Pretrained { path, .. } => {
            if !path.is_file() {
                return Err(Error::WeightLoad(format!(
                    "no pretrained {} weights at {}",
                    cfg.backbone,
                    path.display()
                )));
            }
            (read_safetensors(path, Some(BACKBONE_PREFIX), device)?, Required::Backbone)
        }
        WeightSource::Random { .. } => (HashMap::new(), Required::Nothing),
    };
    assemble(cfg, loaded, required, source.seed(), source.describe(), device)
        .map_err(|e| match e {
            Error::Tensor(t) => Error::WeightLoad(t.to_string()),
            other => other,
        })
}

pub(crate) fn assemble(
    cfg: &ModelConfig,
    loaded: HashMap<String, Tensor>,
    required: Required,
    seed: u64,
    backbone_weights: String,
    device: &Device,
) -> Result<ModelHandle> {
    let store = Arc::new(ParamStore::new(loaded, required, seed, cfg.freeze_backbone));
    let vb = var_builder(&store, device);
    let built = backbones::build(cfg.backbone, vb.pp(BACKBONE_PREFIX))
        .and_then(|b| Head::new(vb.pp(HEAD_PREFIX), cfg.feature_len(), cfg).map(|h| (b, h)));
    let missing = store.missing();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(3).map(String::as_str).collect();
        return Err(Error::WeightLoad(format!(
            "{} required tensor(s) missing, e.g. {}",
            missing.len(),
            shown.join(", ")
        )));
    }
    let (backbone, head) = built?;
    Ok(ModelHandle {
        config: cfg.clone(),
        backbone,
        head,
        params: store.take_created(),
        device: device.clone(),
        backbone_weights,
    })
}

impl ModelHandle {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Where the backbone weights came from; equal strings mean equal
    /// backbone outputs for frozen models.
    pub fn backbone_weights(&self) -> &str {
        &self.backbone_weights
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        let mut counts = ParameterCounts {
            backbone_params: 0,
            head_params: 0,
            trainable_params: 0,
        };
        for p in &self.params {
            let n = p.tensor.elem_count();
            if p.is_backbone() {
                counts.backbone_params += n;
            } else {
                counts.head_params += n;
            }
            if p.var.is_some() {
                counts.trainable_params += n;
            }
        }
        counts
    }

    pub fn named_params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.iter().filter_map(|p| p.var.clone()).collect()
    }

    /// Backbone features `(batch, feature_len)` for an image batch
    /// `(batch, 3, h, w)` in `[0, 1]`. Detached from the graph when the
    /// backbone is frozen.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = images.dims4()?;
        let [eh, ew, ec] = self.config.input_size;
        if (c, h, w) != (ec, eh, ew) {
            return Err(Error::Input(format!(
                "expected images of shape (3, {eh}, {ew}), got ({c}, {h}, {w})"
            )));
        }
        let mut parts = Vec::with_capacity(b.div_ceil(BACKBONE_CHUNK));
        for start in (0..b).step_by(BACKBONE_CHUNK) {
            let chunk = images.narrow(0, start, BACKBONE_CHUNK.min(b - start))?;
            let f = self.backbone.forward(&chunk)?;
            parts.push(if self.config.freeze_backbone { f.detach() } else { f });
        }
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Head logits; `dropout` enables training-mode dropout.
    pub fn head_logits(&self, features: &Tensor, dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (_, d) = features.dims2()?;
        if d != self.config.feature_len() {
            return Err(Error::Input(format!(
                "expected {} features, got {d}",
                self.config.feature_len()
            )));
        }
        Ok(self.head.forward(features, dropout)?)
    }

    pub fn probabilities_from_features(&self, features: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax_last_dim(&self.head_logits(features, None)?)?)
    }

    /// Inference-mode class probabilities `(batch, n_classes)`.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        self.probabilities_from_features(&self.features(images)?)
    }
}
