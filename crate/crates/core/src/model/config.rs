use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::MODEL_INPUT_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Backbone {
    VGG16,
    VGG19,
    ResNet50,
    InceptionV3,
    DenseNet201,
    NASNetLarge,
}

impl Backbone {
    pub const ALL: [Backbone; 6] = [
        Backbone::VGG16,
        Backbone::VGG19,
        Backbone::ResNet50,
        Backbone::InceptionV3,
        Backbone::DenseNet201,
        Backbone::NASNetLarge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::VGG16 => "VGG16",
            Backbone::VGG19 => "VGG19",
            Backbone::ResNet50 => "ResNet50",
            Backbone::InceptionV3 => "InceptionV3",
            Backbone::DenseNet201 => "DenseNet201",
            Backbone::NASNetLarge => "NASNetLarge",
        }
    }

    /// Smallest square input the backbone can reduce without running out of
    /// spatial extent.
    pub fn min_input_size(self) -> usize {
        match self {
            Backbone::InceptionV3 => 75,
            _ => 32,
        }
    }

    /// Length of the flattened feature vector the head receives for an
    /// `height × width` input.
    pub fn feature_len(self, height: usize, width: usize) -> usize {
        match self {
            Backbone::VGG16 | Backbone::VGG19 => {
                let (mut h, mut w) = (height, width);
                for _ in 0..5 {
                    h /= 2;
                    w /= 2;
                }
                512 * h * w
            }
            Backbone::ResNet50 | Backbone::InceptionV3 => 2048,
            Backbone::DenseNet201 => 1920,
            Backbone::NASNetLarge => 4032,
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        Backbone::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(key))
            .ok_or_else(|| Error::Registry(key.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub n_classes: usize,
    #[serde(default = "defaults::fc1_units")]
    pub fc1_units: usize,
    #[serde(default = "defaults::fc2_units")]
    pub fc2_units: usize,
    #[serde(default = "defaults::dropout_rate")]
    pub dropout_rate: f64,
    #[serde(default = "defaults::freeze_backbone")]
    pub freeze_backbone: bool,
    /// `[height, width, channels]`
    #[serde(default = "defaults::input_size")]
    pub input_size: [usize; 3],
}

mod defaults {
    use super::MODEL_INPUT_SIZE;

    pub fn fc1_units() -> usize {
        512
    }
    pub fn fc2_units() -> usize {
        1024
    }
    pub fn dropout_rate() -> f64 {
        0.5
    }
    pub fn freeze_backbone() -> bool {
        true
    }
    pub fn input_size() -> [usize; 3] {
        [MODEL_INPUT_SIZE, MODEL_INPUT_SIZE, 3]
    }
}

impl ModelConfig {
    pub fn new(backbone: Backbone, n_classes: usize) -> Self {
        Self {
            backbone,
            n_classes,
            fc1_units: defaults::fc1_units(),
            fc2_units: defaults::fc2_units(),
            dropout_rate: defaults::dropout_rate(),
            freeze_backbone: defaults::freeze_backbone(),
            input_size: defaults::input_size(),
        }
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_size = [height, width, 3];
        self
    }

    pub fn height(&self) -> usize {
        self.input_size[0]
    }

    pub fn width(&self) -> usize {
        self.input_size[1]
    }

    pub fn feature_len(&self) -> usize {
        self.backbone.feature_len(self.height(), self.width())
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.n_classes) {
            return Err(Error::Config(format!(
                "n_classes must be 2 or 3, got {}",
                self.n_classes
            )));
        }
        if self.fc1_units == 0 || self.fc2_units == 0 {
            return Err(Error::Config("fc1_units and fc2_units must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        let [h, w, c] = self.input_size;
        if c != 3 {
            return Err(Error::Config(format!("input must have 3 channels, got {c}")));
        }
        let min = self.backbone.min_input_size();
        if h < min || w < min {
            return Err(Error::Config(format!(
                "{} needs inputs of at least {min}×{min}, got {h}×{w}",
                self.backbone
            )));
        }
        Ok(())
    }
}
