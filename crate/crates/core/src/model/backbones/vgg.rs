use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use super::{FeatureExtractor, InputScale};
use crate::model::layers::{Conv, Padding};

/// Output channels per convolution; `0` marks a 2×2 max pool.
pub(crate) const VGG16: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
pub(crate) const VGG19: [usize; 21] = [
    64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
];

enum Stage {
    Conv(Conv),
    Pool,
}

/// The VGG convolutional stack through its last max pool, flattened.
pub(crate) struct Vgg {
    stages: Vec<Stage>,
}

impl Vgg {
    pub fn new(vb: VarBuilder, layout: &[usize]) -> Result<Self> {
        let vb = vb.pp("features");
        let mut stages = Vec::new();
        let mut in_c = 3;
        // torchvision numbers conv, relu and pool modules consecutively
        let mut index = 0;
        for &c in layout {
            if c == 0 {
                stages.push(Stage::Pool);
                index += 1;
            } else {
                let conv = Conv::new(vb.pp(index), in_c, c, (3, 3), 1, Padding::Explicit(1, 1), true)?;
                stages.push(Stage::Conv(conv));
                in_c = c;
                index += 2;
            }
        }
        Ok(Self { stages })
    }

    #[cfg(test)]
    pub fn kernel_sizes(&self) -> Vec<(usize, usize)> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Conv(c) => Some(c.kernel_size()),
                Stage::Pool => None,
            })
            .collect()
    }
}

impl FeatureExtractor for Vgg {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = InputScale::ImageNet.apply(x)?;
        for s in &self.stages {
            x = match s {
                Stage::Conv(c) => c.forward(&x)?.relu()?,
                Stage::Pool => x.max_pool2d_with_stride(2, 2)?,
            };
        }
        x.flatten_from(1)
    }
}
