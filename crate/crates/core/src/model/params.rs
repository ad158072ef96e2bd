//! Parameter provisioning for network construction.
//!
//! Every layer asks a [`ParamStore`] for its tensors by name. The store either
//! hands out a tensor read from a weight file or draws a fresh one from a
//! per-name seeded generator, so that randomly initialised networks are
//! reproducible bit for bit. It also decides which tensors become trainable
//! variables and records everything it handed out.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::NormalOrUniform;
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

pub const BACKBONE_PREFIX: &str = "backbone";
pub const HEAD_PREFIX: &str = "head";

/// Environment variable naming the directory of converted backbone weights.
pub const WEIGHTS_DIR_ENV: &str = "HISTO_TL_WEIGHTS";

/// Where backbone weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    /// A safetensors file with the backbone's tensors under their native
    /// names. Head tensors are initialised from `seed`.
    Pretrained { path: PathBuf, seed: u64 },
    /// Everything drawn from `seed`. Meant for tests and smoke runs.
    Random { seed: u64 },
}

impl WeightSource {
    /// `<dir>/<backbone>.safetensors`, e.g. `weights/VGG19.safetensors`.
    pub fn pretrained_in(dir: &Path, backbone: super::Backbone, seed: u64) -> Self {
        WeightSource::Pretrained {
            path: dir.join(format!("{backbone}.safetensors")),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            WeightSource::Pretrained { seed, .. } | WeightSource::Random { seed } => *seed,
        }
    }

    /// Identifies the backbone weights this source yields.
    pub fn describe(&self) -> String {
        match self {
            WeightSource::Pretrained { path, .. } => format!("pretrained:{}", path.display()),
            WeightSource::Random { seed } => format!("random:{seed}"),
        }
    }
}

/// Which requested names must exist in the loaded tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Required {
    Nothing,
    Backbone,
    Everything,
}

#[derive(Debug, Clone)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
    pub var: Option<Var>,
}

impl NamedParam {
    pub fn is_backbone(&self) -> bool {
        is_backbone_name(&self.name)
    }
}

pub(crate) fn is_backbone_name(name: &str) -> bool {
    name.starts_with(BACKBONE_PREFIX) && name[BACKBONE_PREFIX.len()..].starts_with('.')
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

pub(crate) struct ParamStore {
    loaded: HashMap<String, Tensor>,
    required: Required,
    seed: u64,
    freeze_backbone: bool,
    created: Mutex<Vec<NamedParam>>,
    missing: Mutex<Vec<String>>,
}

impl ParamStore {
    pub fn new(loaded: HashMap<String, Tensor>, required: Required, seed: u64, freeze_backbone: bool) -> Self {
        Self {
            loaded,
            required,
            seed,
            freeze_backbone,
            created: Mutex::new(Vec::new()),
            missing: Mutex::new(Vec::new()),
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        if is_backbone_name(name) {
            !self.freeze_backbone && !is_running_stat(name)
        } else {
            true
        }
    }

    pub fn take_created(&self) -> Vec<NamedParam> {
        std::mem::take(&mut *self.created.lock().expect("param store lock"))
    }

    pub fn missing(&self) -> Vec<String> {
        self.missing.lock().expect("param store lock").clone()
    }

    fn must_load(&self, name: &str) -> bool {
        match self.required {
            Required::Nothing => false,
            Required::Backbone => is_backbone_name(name),
            Required::Everything => true,
        }
    }
}

impl SimpleBackend for ParamStore {
    fn get(&self, shape: Shape, name: &str, init: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let tensor = match self.loaded.get(name) {
            Some(t) => {
                if t.shape() != &shape {
                    candle_core::bail!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.dims(),
                        shape.dims()
                    );
                }
                t.to_dtype(dtype)?.to_device(dev)?
            }
            None if self.must_load(name) => {
                self.missing.lock().expect("param store lock").push(name.to_string());
                candle_core::bail!("tensor {name} not found in weight file")
            }
            None => seeded_init(&shape, name, init, self.seed, dtype, dev)?,
        };
        let (tensor, var) = if self.is_trainable(name) {
            let var = Var::from_tensor(&tensor)?;
            (var.as_tensor().clone(), Some(var))
        } else {
            (tensor, None)
        };
        self.created.lock().expect("param store lock").push(NamedParam {
            name: name.to_string(),
            tensor: tensor.clone(),
            var,
        });
        Ok(tensor)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        match self.loaded.get(name) {
            Some(t) => t.to_dtype(dtype)?.to_device(dev),
            None => candle_core::bail!("tensor {name} not found"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.loaded.contains_key(name)
    }
}

pub(crate) fn var_builder(store: &std::sync::Arc<ParamStore>, device: &Device) -> VarBuilder<'static> {
    VarBuilder::from_backend(Box::new(SharedStore(store.clone())), DType::F32, device.clone())
}

struct SharedStore(std::sync::Arc<ParamStore>);

impl SimpleBackend for SharedStore {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        self.0.get(s, name, h, dtype, dev)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        self.0.get_unchecked(name, dtype, dev)
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.0.contains_tensor(name)
    }
}

/// 64-bit FNV-1a, used to derive a per-tensor stream from its name.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn seeded_init(shape: &Shape, name: &str, init: Init, seed: u64, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
    let n = shape.elem_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
    let data: Vec<f32> = match init {
        Init::Const(c) => vec![c as f32; n],
        Init::Uniform { lo, up } => sample_uniform(&mut rng, lo, up, n),
        Init::Randn { mean, stdev } => sample_normal(&mut rng, mean, stdev, n),
        Init::Kaiming {
            dist,
            fan,
            non_linearity,
        } => {
            let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
            match dist {
                NormalOrUniform::Normal => sample_normal(&mut rng, 0.0, std, n),
                NormalOrUniform::Uniform => {
                    let bound = 3f64.sqrt() * std;
                    sample_uniform(&mut rng, -bound, bound, n)
                }
            }
        }
    };
    Tensor::from_vec(data, shape.clone(), dev)?.to_dtype(dtype)
}

fn sample_uniform(rng: &mut ChaCha8Rng, lo: f64, up: f64, n: usize) -> Vec<f32> {
    if up <= lo {
        return vec![lo as f32; n];
    }
    let d = Uniform::new(lo, up).expect("finite bounds");
    (0..n).map(|_| d.sample(rng) as f32).collect()
}

fn sample_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, n: usize) -> Vec<f32> {
    let d = Normal::new(mean, std.max(0.0)).expect("finite std");
    (0..n).map(|_| d.sample(rng) as f32).collect()
}

/// Reads every tensor of a safetensors file, prefixing names with
/// `prefix.` when given.
pub(crate) fn read_safetensors(path: &Path, prefix: Option<&str>, device: &Device) -> Result<HashMap<String, Tensor>> {
    let tensors = candle_core::safetensors::load(path, device).map_err(|e| {
        Error::WeightLoad(format!("cannot read {}: {e}", path.display()))
    })?;
    Ok(tensors
        .into_iter()
        .map(|(k, v)| match prefix {
            Some(p) => (format!("{p}.{k}"), v),
            None => (k, v),
        })
        .collect())
}
