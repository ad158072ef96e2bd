//! Thin layer types over candle tensor ops.
//!
//! candle's own `Conv2d` only covers square kernels with symmetric padding;
//! the Inception and NASNet stacks need rectangular kernels and TensorFlow
//! style "same" padding, so convolutions are expressed directly here.

use candle_core::{Result, Tensor, D};
use candle_nn::{Init, VarBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric zero padding per spatial axis: `(rows, cols)`.
    Explicit(usize, usize),
    /// Output size `ceil(input / stride)`, extra padding on the bottom/right.
    Same,
}

/// `(before, after)` zero padding for TensorFlow "same" semantics.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (total / 2, total - total / 2)
}

pub fn pad2d(x: &Tensor, (top, bottom): (usize, usize), (left, right): (usize, usize)) -> Result<Tensor> {
    let x = if top + bottom > 0 {
        x.pad_with_zeros(2, top, bottom)?
    } else {
        x.clone()
    };
    if left + right > 0 {
        x.pad_with_zeros(3, left, right)
    } else {
        Ok(x)
    }
}

/// Convolution with symmetric zero padding.
///
/// Kernels larger than 1×1 go through an explicit im2col and a single matrix
/// product per image. On CPU this is faster than candle's tiled kernel, and
/// it sidesteps that kernel misreading contiguous inputs as channels-last
/// when channels, height and width coincide.
fn conv2d(x: &Tensor, weight: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (c_out, _, kh, kw) = weight.dims4()?;
    if kh == 1 && kw == 1 {
        return x.conv2d(weight, padding, stride, 1, 1);
    }
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;
    // (c_out, kh·kw·c) in the same tap-major order the columns are built in
    let flat = weight.permute((0, 2, 3, 1))?.reshape((c_out, kh * kw * c))?;
    let mut images = Vec::with_capacity(b);
    for i in 0..b {
        let xp = x.get(i)?;
        // the extra stride - 1 zeros let every tap take out·stride cells
        let xp = xp
            .pad_with_zeros(1, padding, padding + stride - 1)?
            .pad_with_zeros(2, padding, padding + stride - 1)?;
        let mut taps = Vec::with_capacity(kh * kw);
        for di in 0..kh {
            for dj in 0..kw {
                let mut t = xp.narrow(1, di, out_h * stride)?.narrow(2, dj, out_w * stride)?;
                if stride > 1 {
                    t = t
                        .reshape((c, out_h, stride, out_w, stride))?
                        .narrow(2, 0, 1)?
                        .narrow(4, 0, 1)?;
                }
                taps.push(t.reshape((c, out_h * out_w))?);
            }
        }
        let cols = Tensor::cat(&taps, 0)?;
        images.push(flat.matmul(&cols)?.reshape((1, c_out, out_h, out_w))?);
    }
    Tensor::cat(&images, 0)
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: Padding,
}

impl Conv {
    pub fn new(
        vb: VarBuilder,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Self> {
        let weight = vb.get_with_hints(
            (out_c, in_c, kernel.0, kernel.1),
            "weight",
            candle_nn::init::DEFAULT_KAIMING_NORMAL,
        )?;
        let bias = if bias {
            Some(vb.get_with_hints(out_c, "bias", Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let (_, _, kh, kw) = self.weight.dims4().expect("4-d conv weight");
        (kh, kw)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let (kh, kw) = self.kernel_size();
        let (rows, cols) = match self.padding {
            Padding::Explicit(ph, pw) => ((ph, ph), (pw, pw)),
            Padding::Same => (
                same_padding(h, kh, self.stride),
                same_padding(w, kw, self.stride),
            ),
        };
        let y = if rows.0 == rows.1 && cols.0 == cols.1 && rows.0 == cols.0 {
            conv2d(x, &self.weight, rows.0, self.stride)?
        } else {
            conv2d(&pad2d(x, rows, cols)?, &self.weight, 0, self.stride)?
        };
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Batch normalisation with frozen running statistics. The affine parameters
/// may still be trainable.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    weight: Tensor,
    bias: Tensor,
    mean: Tensor,
    var: Tensor,
    eps: f64,
}

impl BatchNorm {
    pub fn new(vb: VarBuilder, channels: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(channels, "weight", Init::Const(1.0))?,
            bias: vb.get_with_hints(channels, "bias", Init::Const(0.0))?,
            mean: vb.get_with_hints(channels, "running_mean", Init::Const(0.0))?,
            var: vb.get_with_hints(channels, "running_var", Init::Const(1.0))?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = (1, (), 1, 1);
        let inv_std = (self.var.affine(1.0, self.eps)?.sqrt()?.recip()?.mul(&self.weight))?;
        let shift = (self.bias.clone() - self.mean.mul(&inv_std)?)?;
        x.broadcast_mul(&inv_std.reshape(shape)?)?
            .broadcast_add(&shift.reshape(shape)?)
    }
}

/// Keeps the even-indexed rows and columns (a stride-2 subsample).
pub(crate) fn subsample2(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, _, _) = x.dims4()?;
    let x = x.narrow(2, 0, (2 * out_h).min(x.dim(2)?))?;
    let x = x.narrow(3, 0, (2 * out_w).min(x.dim(3)?))?;
    let x = pad2d(&x, (0, 2 * out_h - x.dim(2)?), (0, 2 * out_w - x.dim(3)?))?;
    x.reshape((b, c, out_h, 2, out_w, 2))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((b, c, out_h, out_w))
}

/// Depthwise (one filter per channel) convolution, written as a sum of
/// shifted, per-channel scaled copies of the padded input. This is much
/// faster on CPU than a grouped convolution with one group per channel.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    /// `(channels, 1, kh, kw)`
    weight: Tensor,
    stride: usize,
    padding: Padding,
}

impl DepthwiseConv {
    pub fn new(vb: VarBuilder, channels: usize, kernel: usize, stride: usize, padding: Padding) -> Result<Self> {
        let weight = vb.get_with_hints(
            (channels, 1, kernel, kernel),
            "weight",
            candle_nn::init::DEFAULT_KAIMING_NORMAL,
        )?;
        Ok(Self {
            weight,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let (_, _, kh, kw) = self.weight.dims4()?;
        let (rows, cols) = match self.padding {
            Padding::Explicit(ph, pw) => ((ph, ph), (pw, pw)),
            Padding::Same => (same_padding(h, kh, self.stride), same_padding(w, kw, self.stride)),
        };
        let xp = pad2d(x, rows, cols)?;
        let full_h = h + rows.0 + rows.1 - kh + 1;
        let full_w = w + cols.0 + cols.1 - kw + 1;
        let mut acc: Option<Tensor> = None;
        for i in 0..kh {
            for j in 0..kw {
                let tap = self.weight.narrow(2, i, 1)?.narrow(3, j, 1)?.reshape((1, c, 1, 1))?;
                let win = xp.narrow(2, i, full_h)?.narrow(3, j, full_w)?;
                let term = win.broadcast_mul(&tap)?;
                acc = Some(match acc {
                    Some(a) => (a + term)?,
                    None => term,
                });
            }
        }
        let y = acc.expect("kernel has at least one tap");
        if self.stride == 1 {
            Ok(y)
        } else if self.stride == 2 {
            subsample2(&y, full_h.div_ceil(2), full_w.div_ceil(2))
        } else {
            candle_core::bail!("depthwise stride {} not supported", self.stride)
        }
    }
}

pub fn max_pool(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    // edge replication never raises a window's maximum when pad < kernel
    let x = if pad > 0 {
        x.pad_with_same(2, pad, pad)?.pad_with_same(3, pad, pad)?
    } else {
        x.clone()
    };
    x.max_pool2d_with_stride(kernel, stride)
}

/// Average pooling whose padded cells count as zeros in the average.
pub fn avg_pool_include_pad(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    pad2d(x, (pad, pad), (pad, pad))?.avg_pool2d_with_stride(kernel, stride)
}

/// Average pooling with "same" padding that averages over real cells only.
pub fn avg_pool_same(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let rows = same_padding(h, kernel, stride);
    let cols = same_padding(w, kernel, stride);
    if rows == (0, 0) && cols == (0, 0) {
        return x.avg_pool2d_with_stride(kernel, stride);
    }
    let sums = pad2d(x, rows, cols)?.avg_pool2d_with_stride(kernel, stride)?;
    let ones = Tensor::ones((1, 1, h, w), x.dtype(), x.device())?;
    let counts = pad2d(&ones, rows, cols)?.avg_pool2d_with_stride(kernel, stride)?;
    sums.broadcast_div(&counts)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarMap;

    #[test]
    fn same_padding_matches_tensorflow() {
        assert_eq!(same_padding(94, 3, 2), (0, 1));
        assert_eq!(same_padding(187, 3, 2), (1, 1));
        assert_eq!(same_padding(47, 5, 1), (2, 2));
        assert_eq!(same_padding(8, 1, 2), (0, 0));
    }

    #[test]
    fn depthwise_matches_grouped_convolution() {
        let dev = Device::Cpu;
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &dev);
        let x = Tensor::randn(0f32, 1.0, (2, 5, 9, 8), &dev).unwrap();
        for (k, stride, pad) in [(3, 1, 1), (5, 2, 2), (3, 2, 1), (7, 1, 3)] {
            let dw = DepthwiseConv::new(vb.pp(format!("dw{k}{stride}")), 5, k, stride, Padding::Explicit(pad, pad))
                .unwrap();
            let ours = dw.forward(&x).unwrap();
            let reference = x.conv2d(&dw.weight, pad, stride, 1, 5).unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let diff = (ours - reference).unwrap().abs().unwrap().max_all().unwrap();
            assert!(diff.to_scalar::<f32>().unwrap() < 1e-4);
        }
    }

    #[test]
    fn same_average_pool_ignores_padding() {
        let x = Tensor::ones((1, 2, 5, 5), DType::F32, &Device::Cpu).unwrap();
        let y = avg_pool_same(&x, 3, 1).unwrap();
        assert_eq!(y.dims(), &[1, 2, 5, 5]);
        let min = y.min_all().unwrap().to_scalar::<f32>().unwrap();
        assert!((min - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rectangular_kernel_keeps_spatial_size() {
        let dev = Device::Cpu;
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &dev);
        let conv = Conv::new(vb, 4, 6, (1, 7), 1, Padding::Explicit(0, 3), false).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 4, 10, 10), &dev).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[1, 6, 10, 10]);
    }

    #[test]
    fn im2col_matches_candle_convolution() {
        let dev = Device::Cpu;
        let cases = [((2, 5, 9, 11), (6, 5, 3, 3), 1, 2), ((1, 3, 20, 17), (4, 3, 7, 7), 3, 2), ((2, 4, 10, 10), (3, 4, 1, 7), 0, 1), ((1, 6, 13, 13), (2, 6, 3, 3), 0, 2)];
        for (xs, ws, pad, stride) in cases {
            let x = Tensor::randn(0f32, 1.0, xs, &dev).unwrap();
            let w = Tensor::randn(0f32, 1.0, ws, &dev).unwrap();
            let ours = conv2d(&x, &w, pad, stride).unwrap();
            let reference = x.conv2d(&w, pad, stride, 1, 1).unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let d = (ours - reference).unwrap().abs().unwrap().max_all().unwrap();
            assert!(d.to_scalar::<f32>().unwrap() < 1e-4);
        }
    }

    #[test]
    fn convolution_is_correct_when_channels_equal_spatial_size() {
        let dev = Device::Cpu;
        let x = Tensor::randn(0f32, 1.0, (1, 8, 8, 8), &dev).unwrap();
        let w = Tensor::randn(0f32, 1.0, (4, 8, 3, 3), &dev).unwrap();
        let y = conv2d(&x, &w, 1, 1).unwrap();
        assert_eq!(y.dims(), &[1, 4, 8, 8]);
        let xv = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let wv = w.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let yv = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for o in 0..4 {
            for r in 0..8 {
                for c in 0..8 {
                    let mut s = 0f32;
                    for ci in 0..8 {
                        for i in 0..3 {
                            for j in 0..3 {
                                let (rr, cc) = (r + i, c + j);
                                if (1..=8).contains(&rr) && (1..=8).contains(&cc) {
                                    s += xv[ci * 64 + (rr - 1) * 8 + cc - 1] * wv[((o * 8 + ci) * 3 + i) * 3 + j];
                                }
                            }
                        }
                    }
                    assert!((s - yv[(o * 8 + r) * 8 + c]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn batch_norm_with_default_statistics_is_identity() {
        let dev = Device::Cpu;
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &dev);
        let bn = BatchNorm::new(vb, 3, 0.0).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 3, 4, 4), &dev).unwrap();
        let d = (bn.forward(&x).unwrap() - &x).unwrap().abs().unwrap().max_all().unwrap();
        assert!(d.to_scalar::<f32>().unwrap() < 1e-6);
    }
}
