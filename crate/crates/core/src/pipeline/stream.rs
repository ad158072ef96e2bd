use std::path::PathBuf;
use std::sync::Arc;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{decode_image, preprocess_to, AugmentConfig, AugmentParams, ImageTensor, MODEL_INPUT_SIZE};

#[derive(Debug, Clone)]
pub enum ImageSource {
    /// Decoded and preprocessed on every load.
    File(PathBuf),
    /// An already preprocessed tensor; resampled if its size differs from the
    /// stream's input size.
    Memory(Arc<ImageTensor>),
}

/// One stream element: an image plus its task-class index.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub source: ImageSource,
    pub target: usize,
}

impl Sample {
    pub fn from_file(id: impl Into<String>, path: impl Into<PathBuf>, target: usize) -> Self {
        Self {
            id: id.into(),
            source: ImageSource::File(path.into()),
            target,
        }
    }

    pub fn in_memory(id: impl Into<String>, image: ImageTensor, target: usize) -> Self {
        Self {
            id: id.into(),
            source: ImageSource::Memory(Arc::new(image)),
            target,
        }
    }

    pub fn load(&self, (height, width): (usize, usize)) -> Result<ImageTensor> {
        match &self.source {
            ImageSource::File(path) => preprocess_to(&decode_image(path)?, (height, width)),
            ImageSource::Memory(img) => img.resized(height, width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    /// Reshuffled every epoch and augmented.
    Train,
    /// Manifest order, never augmented.
    Eval,
}

#[derive(Debug, Clone)]
pub struct BatchStream {
    samples: Arc<Vec<Sample>>,
    batch_size: usize,
    mode: StreamMode,
    augment: AugmentConfig,
    input_size: (usize, usize),
}

impl BatchStream {
    pub fn new(
        samples: Vec<Sample>,
        batch_size: usize,
        mode: StreamMode,
        augment: AugmentConfig,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Stream("empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Stream("batch_size must be at least 1".into()));
        }
        augment.validate()?;
        Ok(Self {
            samples: Arc::new(samples),
            batch_size,
            mode,
            augment,
            input_size: (MODEL_INPUT_SIZE, MODEL_INPUT_SIZE),
        })
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_size = (height, width);
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    pub fn augment_config(&self) -> &AugmentConfig {
        &self.augment
    }

    pub fn num_batches(&self) -> usize {
        self.samples.len().div_ceil(self.batch_size)
    }

    /// Whether two passes over the stream can deliver different pixels.
    pub fn is_augmenting(&self) -> bool {
        self.mode == StreamMode::Train && !self.augment.is_identity()
    }

    /// Batch layout for one epoch. Sample order and augmentation parameters
    /// are fixed here, before any image is decoded.
    pub fn plan(&self, epoch: u64) -> Vec<BatchPlan<'_>> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mut params: Vec<Option<AugmentParams>> = vec![None; order.len()];
        if self.mode == StreamMode::Train {
            let mut shuffle_rng = ChaCha8Rng::seed_from_u64(self.augment.rng_seed);
            shuffle_rng.set_stream(2 * epoch);
            order.shuffle(&mut shuffle_rng);
            if !self.augment.is_identity() {
                let mut aug_rng = ChaCha8Rng::seed_from_u64(self.augment.rng_seed);
                aug_rng.set_stream(2 * epoch + 1);
                let (h, w) = self.input_size;
                for p in params.iter_mut() {
                    *p = Some(AugmentParams::sample(&self.augment, h, w, &mut aug_rng));
                }
            }
        }
        order
            .chunks(self.batch_size)
            .zip(params.chunks(self.batch_size))
            .map(|(indices, params)| BatchPlan {
                stream: self,
                indices: indices.to_vec(),
                params: params.to_vec(),
            })
            .collect()
    }

    pub fn batches(&self, epoch: u64, device: &Device) -> impl Iterator<Item = Result<Batch>> + '_ {
        let device = device.clone();
        self.plan(epoch).into_iter().map(move |p| p.load(&device))
    }
}

#[derive(Debug, Clone)]
pub struct BatchPlan<'a> {
    stream: &'a BatchStream,
    indices: Vec<usize>,
    params: Vec<Option<AugmentParams>>,
}

impl<'a> BatchPlan<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.stream.input_size
    }

    pub fn samples(&self) -> impl Iterator<Item = &'a Sample> + '_ {
        self.indices.iter().map(|&i| &self.stream.samples[i])
    }

    pub fn ids(&self) -> Vec<&'a str> {
        self.samples().map(|s| s.id.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.samples().map(|s| s.target).collect()
    }

    /// True when no sample in this batch is augmented.
    pub fn is_pristine(&self) -> bool {
        self.params.iter().all(Option::is_none)
    }

    pub fn load_images(&self) -> Result<Vec<ImageTensor>> {
        let fill = self.stream.augment.fill_mode;
        self.samples()
            .zip(&self.params)
            .map(|(s, p)| {
                let img = s.load(self.stream.input_size)?;
                Ok(match p {
                    Some(p) => p.apply(&img, fill),
                    None => img,
                })
            })
            .collect()
    }

    pub fn load(&self, device: &Device) -> Result<Batch> {
        let images = self.load_images()?;
        let targets = self.targets();
        let labels: Vec<u32> = targets.iter().map(|&t| t as u32).collect();
        Ok(Batch {
            images: images_to_tensor(&images, device)?,
            labels: Tensor::new(labels, device)?,
            targets,
            ids: self.ids().into_iter().map(str::to_string).collect(),
        })
    }
}

/// A loaded batch: images as `(batch, 3, height, width)` and labels as `(batch,)`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Tensor,
    pub targets: Vec<usize>,
    pub ids: Vec<String>,
}

pub fn images_to_tensor(images: &[ImageTensor], device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Stream("cannot build an empty batch".into()))?;
    let (h, w, _) = first.shape();
    if images.iter().any(|i| i.shape() != first.shape()) {
        return Err(Error::Stream("images in a batch must share one shape".into()));
    }
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?)
}
