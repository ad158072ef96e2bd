use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use super::{ConvBn, FeatureExtractor, InputScale};
use crate::model::layers::{avg_pool_include_pad, global_avg_pool, max_pool, Padding};

const EPS: f64 = 1e-3;

/// Convolution, batch norm and ReLU under one module name.
struct Basic(ConvBn);

impl Basic {
    fn new(vb: VarBuilder, in_c: usize, out_c: usize, kernel: (usize, usize), stride: usize, pad: (usize, usize)) -> Result<Self> {
        let padding = Padding::Explicit(pad.0, pad.1);
        Ok(Self(ConvBn::new(vb.pp("conv"), vb.pp("bn"), in_c, out_c, kernel, stride, padding, EPS)?))
    }

    fn unit(vb: VarBuilder, in_c: usize, out_c: usize) -> Result<Self> {
        Self::new(vb, in_c, out_c, (1, 1), 1, (0, 0))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.0.forward(x)?.relu()
    }
}

fn chain(layers: &[Basic], x: &Tensor) -> Result<Tensor> {
    layers.iter().try_fold(x.clone(), |x, l| l.forward(&x))
}

struct BlockA {
    b1: Basic,
    b5: [Basic; 2],
    b3: [Basic; 3],
    pool: Basic,
}

impl BlockA {
    fn new(vb: VarBuilder, in_c: usize, pool_features: usize) -> Result<Self> {
        Ok(Self {
            b1: Basic::unit(vb.pp("branch1x1"), in_c, 64)?,
            b5: [
                Basic::unit(vb.pp("branch5x5_1"), in_c, 48)?,
                Basic::new(vb.pp("branch5x5_2"), 48, 64, (5, 5), 1, (2, 2))?,
            ],
            b3: [
                Basic::unit(vb.pp("branch3x3dbl_1"), in_c, 64)?,
                Basic::new(vb.pp("branch3x3dbl_2"), 64, 96, (3, 3), 1, (1, 1))?,
                Basic::new(vb.pp("branch3x3dbl_3"), 96, 96, (3, 3), 1, (1, 1))?,
            ],
            pool: Basic::unit(vb.pp("branch_pool"), in_c, pool_features)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pool = self.pool.forward(&avg_pool_include_pad(x, 3, 1, 1)?)?;
        Tensor::cat(&[self.b1.forward(x)?, chain(&self.b5, x)?, chain(&self.b3, x)?, pool], 1)
    }
}

struct BlockB {
    b3: Basic,
    b3dbl: [Basic; 3],
}

impl BlockB {
    fn new(vb: VarBuilder, in_c: usize) -> Result<Self> {
        Ok(Self {
            b3: Basic::new(vb.pp("branch3x3"), in_c, 384, (3, 3), 2, (0, 0))?,
            b3dbl: [
                Basic::unit(vb.pp("branch3x3dbl_1"), in_c, 64)?,
                Basic::new(vb.pp("branch3x3dbl_2"), 64, 96, (3, 3), 1, (1, 1))?,
                Basic::new(vb.pp("branch3x3dbl_3"), 96, 96, (3, 3), 2, (0, 0))?,
            ],
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::cat(&[self.b3.forward(x)?, chain(&self.b3dbl, x)?, max_pool(x, 3, 2, 0)?], 1)
    }
}

struct BlockC {
    b1: Basic,
    b7: [Basic; 3],
    b7dbl: [Basic; 5],
    pool: Basic,
}

impl BlockC {
    fn new(vb: VarBuilder, in_c: usize, c7: usize) -> Result<Self> {
        let row = |name: &str, i, o| Basic::new(vb.pp(name), i, o, (1, 7), 1, (0, 3));
        let col = |name: &str, i, o| Basic::new(vb.pp(name), i, o, (7, 1), 1, (3, 0));
        Ok(Self {
            b1: Basic::unit(vb.pp("branch1x1"), in_c, 192)?,
            b7: [
                Basic::unit(vb.pp("branch7x7_1"), in_c, c7)?,
                row("branch7x7_2", c7, c7)?,
                col("branch7x7_3", c7, 192)?,
            ],
            b7dbl: [
                Basic::unit(vb.pp("branch7x7dbl_1"), in_c, c7)?,
                col("branch7x7dbl_2", c7, c7)?,
                row("branch7x7dbl_3", c7, c7)?,
                col("branch7x7dbl_4", c7, c7)?,
                row("branch7x7dbl_5", c7, 192)?,
            ],
            pool: Basic::unit(vb.pp("branch_pool"), in_c, 192)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pool = self.pool.forward(&avg_pool_include_pad(x, 3, 1, 1)?)?;
        Tensor::cat(&[self.b1.forward(x)?, chain(&self.b7, x)?, chain(&self.b7dbl, x)?, pool], 1)
    }
}

struct BlockD {
    b3: [Basic; 2],
    b7x3: [Basic; 4],
}

impl BlockD {
    fn new(vb: VarBuilder, in_c: usize) -> Result<Self> {
        Ok(Self {
            b3: [
                Basic::unit(vb.pp("branch3x3_1"), in_c, 192)?,
                Basic::new(vb.pp("branch3x3_2"), 192, 320, (3, 3), 2, (0, 0))?,
            ],
            b7x3: [
                Basic::unit(vb.pp("branch7x7x3_1"), in_c, 192)?,
                Basic::new(vb.pp("branch7x7x3_2"), 192, 192, (1, 7), 1, (0, 3))?,
                Basic::new(vb.pp("branch7x7x3_3"), 192, 192, (7, 1), 1, (3, 0))?,
                Basic::new(vb.pp("branch7x7x3_4"), 192, 192, (3, 3), 2, (0, 0))?,
            ],
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::cat(&[chain(&self.b3, x)?, chain(&self.b7x3, x)?, max_pool(x, 3, 2, 0)?], 1)
    }
}

struct BlockE {
    b1: Basic,
    b3_1: Basic,
    b3_2a: Basic,
    b3_2b: Basic,
    dbl_1: Basic,
    dbl_2: Basic,
    dbl_3a: Basic,
    dbl_3b: Basic,
    pool: Basic,
}

impl BlockE {
    fn new(vb: VarBuilder, in_c: usize) -> Result<Self> {
        Ok(Self {
            b1: Basic::unit(vb.pp("branch1x1"), in_c, 320)?,
            b3_1: Basic::unit(vb.pp("branch3x3_1"), in_c, 384)?,
            b3_2a: Basic::new(vb.pp("branch3x3_2a"), 384, 384, (1, 3), 1, (0, 1))?,
            b3_2b: Basic::new(vb.pp("branch3x3_2b"), 384, 384, (3, 1), 1, (1, 0))?,
            dbl_1: Basic::unit(vb.pp("branch3x3dbl_1"), in_c, 448)?,
            dbl_2: Basic::new(vb.pp("branch3x3dbl_2"), 448, 384, (3, 3), 1, (1, 1))?,
            dbl_3a: Basic::new(vb.pp("branch3x3dbl_3a"), 384, 384, (1, 3), 1, (0, 1))?,
            dbl_3b: Basic::new(vb.pp("branch3x3dbl_3b"), 384, 384, (3, 1), 1, (1, 0))?,
            pool: Basic::unit(vb.pp("branch_pool"), in_c, 192)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.b3_1.forward(x)?;
        let b3 = Tensor::cat(&[self.b3_2a.forward(&a)?, self.b3_2b.forward(&a)?], 1)?;
        let d = self.dbl_2.forward(&self.dbl_1.forward(x)?)?;
        let dbl = Tensor::cat(&[self.dbl_3a.forward(&d)?, self.dbl_3b.forward(&d)?], 1)?;
        let pool = self.pool.forward(&avg_pool_include_pad(x, 3, 1, 1)?)?;
        Tensor::cat(&[self.b1.forward(x)?, b3, dbl, pool], 1)
    }
}

enum Mixed {
    A(BlockA),
    B(BlockB),
    C(BlockC),
    D(BlockD),
    E(BlockE),
}

impl Mixed {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Mixed::A(b) => b.forward(x),
            Mixed::B(b) => b.forward(x),
            Mixed::C(b) => b.forward(x),
            Mixed::D(b) => b.forward(x),
            Mixed::E(b) => b.forward(x),
        }
    }
}

/// Inception v3 through its global average pool (auxiliary classifier
/// omitted).
pub(crate) struct InceptionV3 {
    stem: Vec<Basic>,
    post_pool: Vec<Basic>,
    mixed: Vec<Mixed>,
}

impl InceptionV3 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let stem = vec![
            Basic::new(vb.pp("Conv2d_1a_3x3"), 3, 32, (3, 3), 2, (0, 0))?,
            Basic::new(vb.pp("Conv2d_2a_3x3"), 32, 32, (3, 3), 1, (0, 0))?,
            Basic::new(vb.pp("Conv2d_2b_3x3"), 32, 64, (3, 3), 1, (1, 1))?,
        ];
        let post_pool = vec![
            Basic::unit(vb.pp("Conv2d_3b_1x1"), 64, 80)?,
            Basic::new(vb.pp("Conv2d_4a_3x3"), 80, 192, (3, 3), 1, (0, 0))?,
        ];
        let mixed = vec![
            Mixed::A(BlockA::new(vb.pp("Mixed_5b"), 192, 32)?),
            Mixed::A(BlockA::new(vb.pp("Mixed_5c"), 256, 64)?),
            Mixed::A(BlockA::new(vb.pp("Mixed_5d"), 288, 64)?),
            Mixed::B(BlockB::new(vb.pp("Mixed_6a"), 288)?),
            Mixed::C(BlockC::new(vb.pp("Mixed_6b"), 768, 128)?),
            Mixed::C(BlockC::new(vb.pp("Mixed_6c"), 768, 160)?),
            Mixed::C(BlockC::new(vb.pp("Mixed_6d"), 768, 160)?),
            Mixed::C(BlockC::new(vb.pp("Mixed_6e"), 768, 192)?),
            Mixed::D(BlockD::new(vb.pp("Mixed_7a"), 768)?),
            Mixed::E(BlockE::new(vb.pp("Mixed_7b"), 1280)?),
            Mixed::E(BlockE::new(vb.pp("Mixed_7c"), 2048)?),
        ];
        Ok(Self { stem, post_pool, mixed })
    }
}

impl FeatureExtractor for InceptionV3 {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = InputScale::Symmetric.apply(x)?;
        let x = max_pool(&chain(&self.stem, &x)?, 3, 2, 0)?;
        let mut x = max_pool(&chain(&self.post_pool, &x)?, 3, 2, 0)?;
        for m in &self.mixed {
            x = m.forward(&x)?;
        }
        global_avg_pool(&x)?.flatten_from(1)
    }
}
