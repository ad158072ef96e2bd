//! Convolutional feature extractors.
//!
//! Tensor names follow the torchvision state-dict layout for VGG, ResNet,
//! DenseNet and Inception, and the Keras layer names for NASNet, so converted
//! ImageNet weights load without renaming.

mod densenet;
mod inception;
mod nasnet;
mod resnet;
mod vgg;

use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use super::layers::{BatchNorm, Conv, Padding};
use super::Backbone;

/// Maps a `(batch, 3, h, w)` image batch in `[0, 1]` to `(batch, features)`.
pub(crate) trait FeatureExtractor: Send + Sync {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
}

pub(crate) fn build(backbone: Backbone, vb: VarBuilder) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match backbone {
        Backbone::VGG16 => Box::new(vgg::Vgg::new(vb, &vgg::VGG16)?),
        Backbone::VGG19 => Box::new(vgg::Vgg::new(vb, &vgg::VGG19)?),
        Backbone::ResNet50 => Box::new(resnet::ResNet50::new(vb)?),
        Backbone::InceptionV3 => Box::new(inception::InceptionV3::new(vb)?),
        Backbone::DenseNet201 => Box::new(densenet::DenseNet201::new(vb)?),
        Backbone::NASNetLarge => Box::new(nasnet::NasNetLarge::new(vb)?),
    })
}

/// Per-channel normalisation applied to `[0, 1]` inputs before the first
/// convolution, matching what each family was trained on.
#[derive(Debug, Clone, Copy)]
pub(crate) enum InputScale {
    /// ImageNet channel mean and standard deviation.
    ImageNet,
    /// `2x - 1`, mapping to `[-1, 1]`.
    Symmetric,
}

impl InputScale {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            InputScale::ImageNet => {
                let dev = x.device();
                let mean = Tensor::new(&[0.485f32, 0.456, 0.406], dev)?.reshape((1, 3, 1, 1))?;
                let std = Tensor::new(&[0.229f32, 0.224, 0.225], dev)?.reshape((1, 3, 1, 1))?;
                x.broadcast_sub(&mean)?.broadcast_div(&std)
            }
            InputScale::Symmetric => x.affine(2.0, -1.0),
        }
    }
}

/// Bias-free convolution followed by batch normalisation.
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        conv_vb: VarBuilder,
        bn_vb: VarBuilder,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        eps: f64,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(conv_vb, in_c, out_c, kernel, stride, padding, false)?,
            bn: BatchNorm::new(bn_vb, out_c, eps)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?)
    }
}
