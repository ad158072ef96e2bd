use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use super::{ConvBn, FeatureExtractor, InputScale};
use crate::model::layers::{global_avg_pool, max_pool, Padding};

const EPS: f64 = 1e-5;

struct Bottleneck {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    fn new(vb: VarBuilder, in_c: usize, width: usize, stride: usize) -> Result<Self> {
        let out_c = width * 4;
        let downsample = if stride != 1 || in_c != out_c {
            let d = vb.pp("downsample");
            Some(ConvBn::new(d.pp(0), d.pp(1), in_c, out_c, (1, 1), stride, Padding::Explicit(0, 0), EPS)?)
        } else {
            None
        };
        Ok(Self {
            reduce: ConvBn::new(vb.pp("conv1"), vb.pp("bn1"), in_c, width, (1, 1), 1, Padding::Explicit(0, 0), EPS)?,
            // stride sits on the 3×3 convolution
            spatial: ConvBn::new(vb.pp("conv2"), vb.pp("bn2"), width, width, (3, 3), stride, Padding::Explicit(1, 1), EPS)?,
            expand: ConvBn::new(vb.pp("conv3"), vb.pp("bn3"), width, out_c, (1, 1), 1, Padding::Explicit(0, 0), EPS)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.reduce.forward(x)?.relu()?;
        let y = self.spatial.forward(&y)?.relu()?;
        let y = self.expand.forward(&y)?;
        let shortcut = match &self.downsample {
            Some(d) => d.forward(x)?,
            None => x.clone(),
        };
        (y + shortcut)?.relu()
    }
}

/// ResNet-50 through its global average pool.
pub(crate) struct ResNet50 {
    stem: ConvBn,
    blocks: Vec<Bottleneck>,
}

impl ResNet50 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let stem = ConvBn::new(vb.pp("conv1"), vb.pp("bn1"), 3, 64, (7, 7), 2, Padding::Explicit(3, 3), EPS)?;
        let mut blocks = Vec::new();
        let mut in_c = 64;
        for (i, (depth, width)) in [(3, 64), (4, 128), (6, 256), (3, 512)].into_iter().enumerate() {
            let layer = vb.pp(format!("layer{}", i + 1));
            for j in 0..depth {
                let stride = if j == 0 && i > 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(layer.pp(j), in_c, width, stride)?);
                in_c = width * 4;
            }
        }
        Ok(Self { stem, blocks })
    }
}

impl FeatureExtractor for ResNet50 {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = InputScale::ImageNet.apply(x)?;
        let mut x = max_pool(&self.stem.forward(&x)?.relu()?, 3, 2, 1)?;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        global_avg_pool(&x)?.flatten_from(1)
    }
}
