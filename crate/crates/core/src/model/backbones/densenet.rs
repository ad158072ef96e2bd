use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use super::{FeatureExtractor, InputScale};
use crate::model::layers::{global_avg_pool, max_pool, BatchNorm, Conv, Padding};

const EPS: f64 = 1e-5;
const GROWTH: usize = 32;
const BOTTLENECK: usize = 4;
const BLOCKS: [usize; 4] = [6, 12, 48, 32];

struct DenseLayer {
    norm1: BatchNorm,
    conv1: Conv,
    norm2: BatchNorm,
    conv2: Conv,
}

impl DenseLayer {
    fn new(vb: VarBuilder, in_c: usize) -> Result<Self> {
        let mid = BOTTLENECK * GROWTH;
        Ok(Self {
            norm1: BatchNorm::new(vb.pp("norm1"), in_c, EPS)?,
            conv1: Conv::new(vb.pp("conv1"), in_c, mid, (1, 1), 1, Padding::Explicit(0, 0), false)?,
            norm2: BatchNorm::new(vb.pp("norm2"), mid, EPS)?,
            conv2: Conv::new(vb.pp("conv2"), mid, GROWTH, (3, 3), 1, Padding::Explicit(1, 1), false)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv1.forward(&self.norm1.forward(x)?.relu()?)?;
        self.conv2.forward(&self.norm2.forward(&y)?.relu()?)
    }
}

struct Transition {
    norm: BatchNorm,
    conv: Conv,
}

/// DenseNet-201 through its global average pool.
pub(crate) struct DenseNet201 {
    conv0: Conv,
    norm0: BatchNorm,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    norm5: BatchNorm,
}

impl DenseNet201 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let vb = vb.pp("features");
        let mut c = 64;
        let conv0 = Conv::new(vb.pp("conv0"), 3, c, (7, 7), 2, Padding::Explicit(3, 3), false)?;
        let norm0 = BatchNorm::new(vb.pp("norm0"), c, EPS)?;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (i, &depth) in BLOCKS.iter().enumerate() {
            let bvb = vb.pp(format!("denseblock{}", i + 1));
            let mut layers = Vec::with_capacity(depth);
            for j in 0..depth {
                layers.push(DenseLayer::new(bvb.pp(format!("denselayer{}", j + 1)), c)?);
                c += GROWTH;
            }
            blocks.push(layers);
            if i + 1 < BLOCKS.len() {
                let tvb = vb.pp(format!("transition{}", i + 1));
                transitions.push(Transition {
                    norm: BatchNorm::new(tvb.pp("norm"), c, EPS)?,
                    conv: Conv::new(tvb.pp("conv"), c, c / 2, (1, 1), 1, Padding::Explicit(0, 0), false)?,
                });
                c /= 2;
            }
        }
        let norm5 = BatchNorm::new(vb.pp("norm5"), c, EPS)?;
        Ok(Self {
            conv0,
            norm0,
            blocks,
            transitions,
            norm5,
        })
    }
}

impl FeatureExtractor for DenseNet201 {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = InputScale::ImageNet.apply(x)?;
        let mut x = max_pool(&self.norm0.forward(&self.conv0.forward(&x)?)?.relu()?, 3, 2, 1)?;
        for (i, block) in self.blocks.iter().enumerate() {
            for layer in block {
                let new = layer.forward(&x)?;
                x = Tensor::cat(&[&x, &new], 1)?;
            }
            if let Some(t) = self.transitions.get(i) {
                x = t.conv.forward(&t.norm.forward(&x)?.relu()?)?.avg_pool2d(2)?;
            }
        }
        let x = self.norm5.forward(&x)?.relu()?;
        global_avg_pool(&x)?.flatten_from(1)
    }
}
