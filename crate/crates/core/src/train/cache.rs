use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::model::ModelHandle;
use crate::pipeline::{images_to_tensor, BatchPlan};

type Key = (String, (usize, usize), String);

/// Backbone outputs of un-augmented images, keyed by backbone weights, input
/// size and sample id.
///
/// With a frozen backbone these never change during training, so each image
/// goes through the backbone once per process. The cache can be shared by
/// every run that uses the same backbone weights.
#[derive(Debug, Default)]
pub struct FeatureCache {
    entries: Mutex<HashMap<Key, Arc<Vec<f32>>>>,
}

impl FeatureCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("feature cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Features `(batch, feature_len)` for a pristine plan, computing only
    /// the samples not seen before.
    pub fn features(&self, model: &ModelHandle, plan: &BatchPlan<'_>) -> Result<Tensor> {
        if !model.config().freeze_backbone {
            return Err(Error::Training("backbone features are only cached for frozen backbones".into()));
        }
        if !plan.is_pristine() {
            return Err(Error::Training("augmented batches cannot be served from the feature cache".into()));
        }
        let weights = model.backbone_weights().to_string();
        let size = plan.input_size();
        let key = |id: &str| (weights.clone(), size, id.to_string());

        let samples: Vec<_> = plan.samples().collect();
        let missing: Vec<_> = {
            let entries = self.entries.lock().expect("feature cache lock");
            samples.iter().filter(|s| !entries.contains_key(&key(&s.id))).copied().collect()
        };
        if !missing.is_empty() {
            let images = missing.iter().map(|s| s.load(size)).collect::<Result<Vec<_>>>()?;
            let feats = model.features(&images_to_tensor(&images, model.device())?)?;
            let rows = feats.to_vec2::<f32>()?;
            let mut entries = self.entries.lock().expect("feature cache lock");
            for (s, row) in missing.iter().zip(rows) {
                entries.insert(key(&s.id), Arc::new(row));
            }
        }
        let entries = self.entries.lock().expect("feature cache lock");
        let dim = model.config().feature_len();
        let mut data = Vec::with_capacity(samples.len() * dim);
        for s in &samples {
            data.extend_from_slice(&entries[&key(&s.id)]);
        }
        Ok(Tensor::from_vec(data, (samples.len(), dim), model.device())?)
    }
}
