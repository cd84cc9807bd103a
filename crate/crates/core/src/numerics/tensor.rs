use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::Result;

/// Row-major dense array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    /// `self += other` elementwise; shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

/// A `(channels, height, width)` grid, the substrate attention samples from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(shape_err!("feature map needs height, width >= 1"));
        }
        Ok(Self {
            values: Tensor::new(vec![channels, height, width], data)?,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty feature map");
        Self {
            values: Tensor::zeros(&[channels, height, width]),
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut m = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let i = (c * height + y) * width + x;
                    m.values.data[i] = f(c, y, x);
                }
            }
        }
        m
    }

    pub fn from_tensor(values: Tensor) -> Result<Self> {
        match *values.shape() {
            [_, h, w] if h > 0 && w > 0 => Ok(Self { values }),
            _ => Err(shape_err!(
                "feature map tensor must be (C, H>=1, W>=1), got {:?}",
                values.shape()
            )),
        }
    }

    pub fn channels(&self) -> usize {
        self.values.shape[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape[2]
    }

    pub fn plane_len(&self) -> usize {
        self.height() * self.width()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    pub fn data(&self) -> &[f64] {
        &self.values.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.values.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values.data[(c * self.height() + y) * self.width() + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.values.data[c * n..(c + 1) * n]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels(), self.height(), self.width())
    }

    /// Elementwise SiLU.
    pub fn silu(&self) -> Self {
        let mut m = self.clone();
        m.data_mut().iter_mut().for_each(|v| *v = super::silu(*v));
        m
    }

    /// Gradient through [`FeatureMap::silu`] given the pre-activation `self`.
    pub fn silu_backward(&self, grad_out: &FeatureMap) -> Self {
        let mut g = grad_out.clone();
        for (gv, x) in g.data_mut().iter_mut().zip(self.data()) {
            *gv *= super::silu_backward(*x);
        }
        g
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        self.values.add_assign(&other.values);
    }

    /// Pixel-major copy: row `y * width + x` holds that pixel's channel vector.
    pub fn to_tokens(&self) -> Vec<f64> {
        let (c, n) = (self.channels(), self.plane_len());
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            for (p, v) in self.channel(ch).iter().enumerate() {
                out[p * c + ch] = *v;
            }
        }
        out
    }

    /// Inverse of [`FeatureMap::to_tokens`].
    pub fn from_tokens(channels: usize, height: usize, width: usize, tokens: &[f64]) -> Self {
        let mut m = Self::zeros(channels, height, width);
        let n = height * width;
        for p in 0..n {
            for ch in 0..channels {
                m.values.data[ch * n + p] = tokens[p * channels + ch];
            }
        }
        m
    }
}
