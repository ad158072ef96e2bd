//! Backbone registry, classification head, weight loading and checkpoints.

mod backbones;
mod checkpoint;
mod config;
mod handle;
mod head;
mod layers;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_config, save_checkpoint, CHECKPOINT_FILE_NAME, CHECKPOINT_FORMAT_VERSION,
};
pub use config::{Backbone, ModelConfig};
pub use handle::{build_model, ModelHandle, ParameterCounts};
pub use params::{NamedParam, WeightSource, WEIGHTS_DIR_ENV};
