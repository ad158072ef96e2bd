use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use super::handle::{assemble, ModelHandle};
use super::params::Required;
use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: &str = "1";
pub const CHECKPOINT_FILE_NAME: &str = "checkpoint.safetensors";

const KEY_VERSION: &str = "format_version";
const KEY_CONFIG: &str = "model_config";
const KEY_BACKBONE_WEIGHTS: &str = "backbone_weights";

/// Writes every tensor of the model plus its configuration into one
/// safetensors file.
pub fn save_checkpoint(model: &ModelHandle, path: &Path) -> Result<()> {
    let tensors: HashMap<String, Tensor> = model
        .named_params()
        .iter()
        .map(|p| {
            let t = match &p.var {
                Some(v) => v.as_tensor().clone(),
                None => p.tensor.clone(),
            };
            (p.name.clone(), t)
        })
        .collect();
    let metadata = HashMap::from([
        (KEY_VERSION.to_string(), CHECKPOINT_FORMAT_VERSION.to_string()),
        (KEY_CONFIG.to_string(), serde_json::to_string(model.config())?),
        (KEY_BACKBONE_WEIGHTS.to_string(), model.backbone_weights().to_string()),
    ]);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    safetensors::serialize_to_file(tensors, Some(metadata), path)
        .map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", path.display())))
}

/// Configuration stored in a checkpoint, without loading its tensors.
pub fn read_checkpoint_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(header(path, &bytes)?.0)
}

fn header(path: &Path, bytes: &[u8]) -> Result<(ModelConfig, String)> {
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| bad(format!("unreadable header: {e}")))?;
    let meta = meta.metadata().clone().unwrap_or_default();
    match meta.get(KEY_VERSION).map(String::as_str) {
        Some(CHECKPOINT_FORMAT_VERSION) => {}
        Some(v) => return Err(bad(format!("unsupported format version {v:?}"))),
        None => return Err(bad("not a model checkpoint (no format version)".into())),
    }
    let cfg = meta
        .get(KEY_CONFIG)
        .ok_or_else(|| bad("missing model configuration".into()))?;
    let cfg: ModelConfig = serde_json::from_str(cfg).map_err(|e| bad(format!("bad model configuration: {e}")))?;
    let weights = meta.get(KEY_BACKBONE_WEIGHTS).cloned().unwrap_or_default();
    Ok((cfg, weights))
}

/// Rebuilds a model from a checkpoint. When `expected` is given, the stored
/// configuration must equal it.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>, device: &Device) -> Result<ModelHandle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (cfg, weights) = header(path, &bytes)?;
    if let Some(exp) = expected {
        if exp != &cfg {
            return Err(Error::Checkpoint(format!(
                "{} was saved for {} with {} classes, expected {} with {} classes",
                path.display(),
                cfg.backbone,
                cfg.n_classes,
                exp.backbone,
                exp.n_classes
            )));
        }
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    assemble(&cfg, tensors, Required::Everything, 0, weights, device).map_err(|e| {
        Error::Checkpoint(format!("{}: {e}", path.display()))
    })
}
