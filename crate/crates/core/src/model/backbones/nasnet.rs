use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use super::{FeatureExtractor, InputScale};
use crate::model::layers::{
    avg_pool_same, global_avg_pool, pad2d, subsample2, BatchNorm, Conv, DepthwiseConv, Padding,
};

const EPS: f64 = 1e-3;
const STEM_FILTERS: usize = 96;
const PENULTIMATE_FILTERS: usize = 4032;
const BLOCKS_PER_STAGE: usize = 6;
const MULTIPLIER: usize = 2;

/// Zero padding that makes a stride-2 "valid" window land like TensorFlow's
/// "same" one, for an odd kernel.
fn correct_pad(x: &Tensor, kernel: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let k = kernel / 2;
    pad2d(x, (k - (1 - h % 2), k), (k - (1 - w % 2), k))
}

fn unit_conv(vb: VarBuilder, in_c: usize, out_c: usize) -> Result<Conv> {
    Conv::new(vb, in_c, out_c, (1, 1), 1, Padding::Explicit(0, 0), false)
}

struct SeparableConv {
    depthwise: DepthwiseConv,
    pointwise: Conv,
}

impl SeparableConv {
    fn new(vb: VarBuilder, in_c: usize, out_c: usize, kernel: usize, stride: usize) -> Result<Self> {
        let padding = if stride == 1 {
            Padding::Same
        } else {
            Padding::Explicit(0, 0)
        };
        Ok(Self {
            depthwise: DepthwiseConv::new(vb.pp("depthwise"), in_c, kernel, stride, padding)?,
            pointwise: unit_conv(vb.pp("pointwise"), in_c, out_c)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.pointwise.forward(&self.depthwise.forward(x)?)
    }
}

/// Two ReLU → separable conv → batch norm stages; only the first may stride.
struct SepBlock {
    conv1: SeparableConv,
    bn1: BatchNorm,
    conv2: SeparableConv,
    bn2: BatchNorm,
    kernel: usize,
    stride: usize,
}

impl SepBlock {
    fn new(vb: &VarBuilder, id: &str, in_c: usize, filters: usize, kernel: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv1: SeparableConv::new(vb.pp(format!("separable_conv_1_{id}")), in_c, filters, kernel, stride)?,
            bn1: BatchNorm::new(vb.pp(format!("separable_conv_1_bn_{id}")), filters, EPS)?,
            conv2: SeparableConv::new(vb.pp(format!("separable_conv_2_{id}")), filters, filters, kernel, 1)?,
            bn2: BatchNorm::new(vb.pp(format!("separable_conv_2_bn_{id}")), filters, EPS)?,
            kernel,
            stride,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.relu()?;
        if self.stride == 2 {
            x = correct_pad(&x, self.kernel)?;
        }
        let x = self.bn1.forward(&self.conv1.forward(&x)?)?.relu()?;
        self.bn2.forward(&self.conv2.forward(&x)?)
    }
}

/// Brings the previous cell's output to the current cell's resolution and
/// width.
enum Adjust {
    Identity,
    /// Two offset stride-2 1×1 paths, concatenated.
    Reduce { conv1: Conv, conv2: Conv, bn: BatchNorm },
    Project { conv: Conv, bn: BatchNorm },
}

impl Adjust {
    fn forward(&self, p: &Tensor) -> Result<Tensor> {
        match self {
            Adjust::Identity => Ok(p.clone()),
            Adjust::Reduce { conv1, conv2, bn } => {
                let p = p.relu()?;
                let (_, _, h, w) = p.dims4()?;
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                let p1 = conv1.forward(&subsample2(&p, oh, ow)?)?;
                let shifted = p.narrow(2, 1, h - 1)?.narrow(3, 1, w - 1)?;
                let p2 = conv2.forward(&subsample2(&shifted, oh, ow)?)?;
                bn.forward(&Tensor::cat(&[p1, p2], 1)?)
            }
            Adjust::Project { conv, bn } => bn.forward(&conv.forward(&p.relu()?)?),
        }
    }
}

/// Channel count and resolution level (number of halvings) of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct MapInfo {
    channels: usize,
    level: usize,
}

fn adjust(vb: &VarBuilder, id: &str, p: Option<MapInfo>, ip: MapInfo, filters: usize) -> Result<(Adjust, MapInfo)> {
    // the first cell uses its own input unchanged
    let Some(p) = p else {
        return Ok((Adjust::Identity, ip));
    };
    let out = MapInfo {
        channels: filters,
        level: ip.level,
    };
    if p.level != ip.level {
        let adj = Adjust::Reduce {
            conv1: unit_conv(vb.pp(format!("adjust_conv_1_{id}")), p.channels, filters / 2)?,
            conv2: unit_conv(vb.pp(format!("adjust_conv_2_{id}")), p.channels, filters / 2)?,
            bn: BatchNorm::new(vb.pp(format!("adjust_bn_{id}")), filters, EPS)?,
        };
        Ok((adj, out))
    } else if p.channels != filters {
        let adj = Adjust::Project {
            conv: unit_conv(vb.pp(format!("adjust_conv_projection_{id}")), p.channels, filters)?,
            bn: BatchNorm::new(vb.pp(format!("adjust_bn_{id}")), filters, EPS)?,
        };
        Ok((adj, out))
    } else {
        Ok((Adjust::Identity, p))
    }
}

struct NormalCell {
    adjust: Adjust,
    conv: Conv,
    bn: BatchNorm,
    left1: SepBlock,
    right1: SepBlock,
    left2: SepBlock,
    right2: SepBlock,
    left5: SepBlock,
}

impl NormalCell {
    fn new(vb: &VarBuilder, id: &str, ip: MapInfo, p: Option<MapInfo>, f: usize) -> Result<(Self, MapInfo)> {
        let (adjust, p) = adjust(vb, id, p, ip, f)?;
        let sep = |side: &str, in_c, k| SepBlock::new(vb, &format!("normal_{side}_{id}"), in_c, f, k, 1);
        let cell = Self {
            adjust,
            conv: unit_conv(vb.pp(format!("normal_conv_1_{id}")), ip.channels, f)?,
            bn: BatchNorm::new(vb.pp(format!("normal_bn_1_{id}")), f, EPS)?,
            left1: sep("left1", f, 5)?,
            right1: sep("right1", p.channels, 3)?,
            left2: sep("left2", p.channels, 5)?,
            right2: sep("right2", p.channels, 3)?,
            left5: sep("left5", f, 3)?,
        };
        let out = MapInfo {
            channels: p.channels + 5 * f,
            level: ip.level,
        };
        Ok((cell, out))
    }

    fn forward(&self, ip: &Tensor, p: &Tensor) -> Result<Tensor> {
        let p = self.adjust.forward(p)?;
        let h = self.bn.forward(&self.conv.forward(&ip.relu()?)?)?;
        let x1 = (self.left1.forward(&h)? + self.right1.forward(&p)?)?;
        let x2 = (self.left2.forward(&p)? + self.right2.forward(&p)?)?;
        let x3 = (avg_pool_same(&h, 3, 1)? + &p)?;
        let x4 = avg_pool_same(&p, 3, 1)?.affine(2.0, 0.0)?;
        let x5 = (self.left5.forward(&h)? + &h)?;
        Tensor::cat(&[&p, &x1, &x2, &x3, &x4, &x5], 1)
    }
}

struct ReductionCell {
    adjust: Adjust,
    conv: Conv,
    bn: BatchNorm,
    left1: SepBlock,
    right1: SepBlock,
    right2: SepBlock,
    right3: SepBlock,
    left4: SepBlock,
}

impl ReductionCell {
    fn new(vb: &VarBuilder, id: &str, ip: MapInfo, p: Option<MapInfo>, f: usize) -> Result<(Self, MapInfo)> {
        let (adjust, p) = adjust(vb, id, p, ip, f)?;
        let sep = |side: &str, in_c, k, s| SepBlock::new(vb, &format!("reduction_{side}_{id}"), in_c, f, k, s);
        let cell = Self {
            adjust,
            conv: unit_conv(vb.pp(format!("reduction_conv_1_{id}")), ip.channels, f)?,
            bn: BatchNorm::new(vb.pp(format!("reduction_bn_1_{id}")), f, EPS)?,
            left1: sep("left1", f, 5, 2)?,
            right1: sep("right1", p.channels, 7, 2)?,
            right2: sep("right2", p.channels, 7, 2)?,
            right3: sep("right3", p.channels, 5, 2)?,
            left4: sep("left4", f, 3, 1)?,
        };
        let out = MapInfo {
            channels: 4 * f,
            level: ip.level + 1,
        };
        Ok((cell, out))
    }

    fn forward(&self, ip: &Tensor, p: &Tensor) -> Result<Tensor> {
        let p = self.adjust.forward(p)?;
        let h = self.bn.forward(&self.conv.forward(&ip.relu()?)?)?;
        let h3 = correct_pad(&h, 3)?;
        let max_h3 = h3.max_pool2d_with_stride(3, 2)?;
        let x1 = (self.left1.forward(&h)? + self.right1.forward(&p)?)?;
        let x2 = (&max_h3 + self.right2.forward(&p)?)?;
        let x3 = (h3.avg_pool2d_with_stride(3, 2)? + self.right3.forward(&p)?)?;
        let x4 = (avg_pool_same(&x1, 3, 1)? + &x2)?;
        let x5 = (self.left4.forward(&x1)? + &max_h3)?;
        Tensor::cat(&[&x2, &x3, &x4, &x5], 1)
    }
}

enum Cell {
    Normal(NormalCell),
    Reduction(ReductionCell),
}

struct Step {
    cell: Cell,
    /// Large NASNet lets the cell after a mid-network reduction see the map
    /// from before that reduction.
    keep_previous: bool,
}

/// NASNet-A Large (6 @ 4032): stem, 18 normal and 2 reduction cells, final
/// ReLU and global average pool.
pub(crate) struct NasNetLarge {
    stem_conv: Conv,
    stem_bn: BatchNorm,
    steps: Vec<Step>,
}

impl NasNetLarge {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let f = PENULTIMATE_FILTERS / 24;
        let m = MULTIPLIER;
        let stem_conv = Conv::new(vb.pp("stem_conv1"), 3, STEM_FILTERS, (3, 3), 2, Padding::Explicit(0, 0), false)?;
        let stem_bn = BatchNorm::new(vb.pp("stem_bn1"), STEM_FILTERS, EPS)?;

        let mut plan: Vec<(bool, String, usize, bool)> = vec![
            (true, "stem_1".into(), f / (m * m), false),
            (true, "stem_2".into(), f / m, false),
        ];
        let n = BLOCKS_PER_STAGE;
        for stage in 0..3 {
            let width = f * m.pow(stage as u32);
            if stage > 0 {
                plan.push((true, format!("reduce_{}", stage * n), width, true));
            }
            for i in 0..n {
                let id = if stage == 0 { i } else { stage * n + i + 1 };
                plan.push((false, id.to_string(), width, false));
            }
        }

        let mut x = MapInfo {
            channels: STEM_FILTERS,
            level: 0,
        };
        let mut p: Option<MapInfo> = None;
        let mut steps = Vec::with_capacity(plan.len());
        for (reduction, id, width, keep_previous) in plan {
            let (cell, out) = if reduction {
                let (c, o) = ReductionCell::new(&vb, &id, x, p, width)?;
                (Cell::Reduction(c), o)
            } else {
                let (c, o) = NormalCell::new(&vb, &id, x, p, width)?;
                (Cell::Normal(c), o)
            };
            if !keep_previous {
                p = Some(x);
            }
            x = out;
            steps.push(Step { cell, keep_previous });
        }
        debug_assert_eq!(x.channels, PENULTIMATE_FILTERS);
        Ok(Self {
            stem_conv,
            stem_bn,
            steps,
        })
    }
}

impl FeatureExtractor for NasNetLarge {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = InputScale::Symmetric.apply(x)?;
        let mut x = self.stem_bn.forward(&self.stem_conv.forward(&x)?)?;
        let mut p: Option<Tensor> = None;
        for step in &self.steps {
            let prev = p.clone().unwrap_or_else(|| x.clone());
            let out = match &step.cell {
                Cell::Normal(c) => c.forward(&x, &prev)?,
                Cell::Reduction(c) => c.forward(&x, &prev)?,
            };
            if !step.keep_previous {
                p = Some(x);
            }
            x = out;
        }
        global_avg_pool(&x.relu()?)?.flatten_from(1)
    }
}
