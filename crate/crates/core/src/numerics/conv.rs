//! 2-D cross-correlation with zero padding.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::{matmul, matmul_a_bt, matmul_at_b};

use super::{FeatureMap, Tensor};
use crate::error::shape_err;
use crate::Result;

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub input: FeatureMap,
    pub kernel: Tensor,
    pub bias: Tensor,
}

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(shape_err!("kernel {k} larger than padded input {padded}"));
    }
    Ok((padded - k) / stride + 1)
}

fn check(map: &FeatureMap, kernel: &Tensor, bias: &[f64], stride: usize) -> Result<[usize; 4]> {
    let [oc, ic, kh, kw] = match *kernel.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(shape_err!("kernel must be 4-d, got {:?}", kernel.shape())),
    };
    if ic != map.channels() {
        return Err(shape_err!(
            "kernel expects {ic} input channels, map has {}",
            map.channels()
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(shape_err!("kernel extents must be odd, got {kh}x{kw}"));
    }
    if bias.len() != oc {
        return Err(shape_err!("bias has {} entries for {oc} outputs", bias.len()));
    }
    if stride == 0 {
        return Err(shape_err!("stride must be >= 1"));
    }
    Ok([oc, ic, kh, kw])
}

/// Range of output columns `ox` whose input column `ox*stride + kx - pad`
/// falls in `0..width`.
#[inline]
fn valid_range(out_w: usize, width: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // ix = ox*s + k - pad >= 0  <=>  ox >= ceil((pad - k)/s)
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // ix < width  <=>  ox*s < width + pad - k
    let lim = width + pad;
    let hi = if lim <= k {
        0
    } else {
        (lim - k).div_ceil(stride).min(out_w)
    };
    (lo.min(hi), hi)
}

/// Stride-1 convolution; spatial size is preserved when
/// `padding == (kh / 2, kw / 2)`.
pub fn conv2d(
    map: &FeatureMap,
    kernel: &Tensor,
    bias: &[f64],
    padding: (usize, usize),
) -> Result<FeatureMap> {
    conv2d_strided(map, kernel, bias, 1, padding)
}

pub fn conv2d_strided(
    map: &FeatureMap,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: (usize, usize),
) -> Result<FeatureMap> {
    let [oc, ic, kh, kw] = check(map, kernel, bias, stride)?;
    let (h, w) = (map.height(), map.width());
    let oh = out_extent(h, kh, stride, padding.0)?;
    let ow = out_extent(w, kw, stride, padding.1)?;
    let geom = Geometry { ic, kh, kw, h, w, oh, ow, stride, padding };
    let cols = geom.im2col(map.data());
    let mut out = FeatureMap::zeros(oc, oh, ow);
    let plane = oh * ow;
    matmul(kernel.data(), &cols, oc, ic * kh * kw, plane, out.data_mut());
    for (o, b) in bias.iter().enumerate() {
        out.data_mut()[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

/// Backward of [`conv2d_strided`] for an output gradient of matching shape.
pub fn conv2d_backward(
    map: &FeatureMap,
    kernel: &Tensor,
    stride: usize,
    padding: (usize, usize),
    grad_out: &FeatureMap,
) -> Result<ConvGrads> {
    let oc = kernel.shape().first().copied().unwrap_or(0);
    let [oc, ic, kh, kw] = check(map, kernel, &vec![0.0; oc], stride)?;
    let (h, w) = (map.height(), map.width());
    let oh = out_extent(h, kh, stride, padding.0)?;
    let ow = out_extent(w, kw, stride, padding.1)?;
    if grad_out.channels() != oc || grad_out.height() != oh || grad_out.width() != ow {
        return Err(shape_err!("output gradient shape mismatch"));
    }
    let geom = Geometry { ic, kh, kw, h, w, oh, ow, stride, padding };
    let rows = ic * kh * kw;
    let plane = oh * ow;
    let g = grad_out.data();
    let cols = geom.im2col(map.data());
    let mut grad_k = kernel.zeros_like();
    matmul_a_bt(g, &cols, oc, plane, rows, grad_k.data_mut());
    let mut grad_cols = vec![0.0; rows * plane];
    matmul_at_b(kernel.data(), g, oc, rows, plane, &mut grad_cols);
    let mut grad_in = map.zeros_like();
    geom.col2im(&grad_cols, grad_in.data_mut());
    let mut grad_b = Tensor::zeros(&[oc]);
    for (o, gb) in grad_b.data_mut().iter_mut().enumerate() {
        *gb = g[o * plane..(o + 1) * plane].iter().sum();
    }
    Ok(ConvGrads {
        input: grad_in,
        kernel: grad_k,
        bias: grad_b,
    })
}

/// Shapes of one convolution, used to unfold the input into columns.
struct Geometry {
    ic: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: (usize, usize),
}

impl Geometry {
    /// Visits every in-bounds (column row, output index, input index) triple
    /// one output row segment at a time.
    fn for_each_segment(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let plane = self.oh * self.ow;
        for i in 0..self.ic {
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = valid_range(self.oh, self.h, self.stride, ky, self.padding.0);
                for kx in 0..self.kw {
                    let (ox_lo, ox_hi) =
                        valid_range(self.ow, self.w, self.stride, kx, self.padding.1);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let row = (i * self.kh + ky) * self.kw + kx;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.padding.0;
                        let dst = row * plane + oy * self.ow + ox_lo;
                        let src = (i * self.h + iy) * self.w + ox_lo * self.stride + kx
                            - self.padding.1;
                        f(dst, src, ox_hi - ox_lo, self.stride);
                    }
                }
            }
        }
    }

    /// `(ic*kh*kw) x (oh*ow)` matrix of input taps, zero where padded.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.ic * self.kh * self.kw * self.oh * self.ow];
        self.for_each_segment(|dst, src, n, s| {
            let out = &mut cols[dst..dst + n];
            if s == 1 {
                out.copy_from_slice(&input[src..src + n]);
            } else {
                for (j, v) in out.iter_mut().enumerate() {
                    *v = input[src + j * s];
                }
            }
        });
        cols
    }

    /// Adjoint of [`Geometry::im2col`]: scatters column gradients back onto the input.
    fn col2im(&self, cols: &[f64], grad: &mut [f64]) {
        self.for_each_segment(|dst, src, n, s| {
            let seg = &cols[dst..dst + n];
            if s == 1 {
                for (g, c) in grad[src..src + n].iter_mut().zip(seg) {
                    *g += c;
                }
            } else {
                for (j, c) in seg.iter().enumerate() {
                    grad[src + j * s] += c;
                }
            }
        });
    }
}


/// Convolution layer parameters with "same"-style padding `(kh/2, kw/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv2d {
    pub fn zeros(out_c: usize, in_c: usize, kh: usize, kw: usize, stride: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[out_c, in_c, kh, kw]),
            bias: Tensor::zeros(&[out_c]),
            stride,
        }
    }

    /// He-uniform weights scaled by `gain`, zero bias.
    pub fn init(
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        gain: f64,
        rng: &mut crate::rng::Rng,
    ) -> Self {
        let fan_in = (in_c * kh * kw) as f64;
        let limit = gain * libm::sqrt(6.0 / fan_in);
        Self {
            kernel: Tensor::from_fn(&[out_c, in_c, kh, kw], |_| rng.range(-limit, limit)),
            bias: Tensor::zeros(&[out_c]),
            stride,
        }
    }

    pub fn padding(&self) -> (usize, usize) {
        (self.kernel.shape()[2] / 2, self.kernel.shape()[3] / 2)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        conv2d_strided(x, &self.kernel, self.bias.data(), self.stride, self.padding())
    }

    /// Accumulates kernel/bias gradients into `grad`, returns the input
    /// gradient.
    pub fn backward(&self, x: &FeatureMap, grad_out: &FeatureMap, grad: &mut Conv2d) -> Result<FeatureMap> {
        let g = conv2d_backward(x, &self.kernel, self.stride, self.padding(), grad_out)?;
        grad.kernel.add_assign(&g.kernel);
        grad.bias.add_assign(&g.bias);
        Ok(g.input)
    }
}

crate::params::param_set!(Conv2d { kernel, bias });
