//! Bilinear sampling with zero padding.
//!
//! A normalized coordinate `(x, y)` maps to continuous pixel space as
//! `x_pix = x * width - 0.5`, `y_pix = y * height - 0.5`, so `(0, 0)` is the
//! outer corner of the first pixel and pixel centers sit at
//! `((col + 0.5) / width, (row + 0.5) / height)`. Taps that land outside the
//! grid contribute zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::FeatureMap;
use crate::{Error, Result};

/// The (up to) four in-bounds taps of one sample and their weights, plus the
/// derivatives of those weights with respect to the normalized coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BilinearTaps {
    /// Flat index `y * width + x` within a channel plane, `None` when padded.
    pub index: [Option<usize>; 4],
    pub weight: [f64; 4],
    pub dweight_dx: [f64; 4],
    pub dweight_dy: [f64; 4],
}

impl BilinearTaps {
    pub fn new(height: usize, width: usize, x: f64, y: f64) -> Self {
        let (wf, hf) = (width as f64, height as f64);
        let xp = x * wf - 0.5;
        let yp = y * hf - 0.5;
        let x0f = libm::floor(xp);
        let y0f = libm::floor(yp);
        let fx = xp - x0f;
        let fy = yp - y0f;
        // Far-away points saturate; they are out of bounds either way.
        let x0 = x0f.clamp(-4.0, wf + 4.0) as i64;
        let y0 = y0f.clamp(-4.0, hf + 4.0) as i64;

        let corners = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
        let weight = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let dweight_dx = [-(1.0 - fy) * wf, (1.0 - fy) * wf, -fy * wf, fy * wf];
        let dweight_dy = [-(1.0 - fx) * hf, -fx * hf, (1.0 - fx) * hf, fx * hf];

        let mut taps = Self {
            weight,
            dweight_dx,
            dweight_dy,
            ..Self::default()
        };
        for (k, (cx, cy)) in corners.iter().enumerate() {
            if *cx >= 0 && *cy >= 0 && (*cx as usize) < width && (*cy as usize) < height {
                taps.index[k] = Some(*cy as usize * width + *cx as usize);
            }
        }
        taps
    }

    /// Interpolated value of one channel plane.
    #[inline]
    pub fn sample(&self, plane: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..4 {
            if let Some(i) = self.index[k] {
                acc += self.weight[k] * plane[i];
            }
        }
        acc
    }

    /// Derivative of [`BilinearTaps::sample`] with respect to `(x, y)`.
    #[inline]
    pub fn sample_grad(&self, plane: &[f64]) -> (f64, f64) {
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in 0..4 {
            if let Some(i) = self.index[k] {
                gx += self.dweight_dx[k] * plane[i];
                gy += self.dweight_dy[k] * plane[i];
            }
        }
        (gx, gy)
    }

    /// Adds `upstream * weight` into the padded-away-aware plane gradient.
    #[inline]
    pub fn scatter(&self, upstream: f64, grad_plane: &mut [f64]) {
        for k in 0..4 {
            if let Some(i) = self.index[k] {
                grad_plane[i] += self.weight[k] * upstream;
            }
        }
    }
}

fn check_point(point: (f64, f64)) -> Result<()> {
    if point.0.is_finite() && point.1.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "sampling point ({}, {}) is not finite",
            point.0, point.1
        )))
    }
}

/// Samples every channel of `map` at the normalized coordinate `point`.
pub fn bilinear_sample(map: &FeatureMap, point: (f64, f64)) -> Result<Vec<f64>> {
    let mut out = vec![0.0; map.channels()];
    bilinear_sample_into(map, point, &mut out)?;
    Ok(out)
}

pub fn bilinear_sample_into(map: &FeatureMap, point: (f64, f64), out: &mut [f64]) -> Result<()> {
    check_point(point)?;
    let taps = BilinearTaps::new(map.height(), map.width(), point.0, point.1);
    for (c, o) in out.iter_mut().enumerate().take(map.channels()) {
        *o = taps.sample(map.channel(c));
    }
    Ok(())
}

/// Backward of [`bilinear_sample`] for an upstream gradient over channels.
///
/// Accumulates into `grad_map` and returns the gradient with respect to the
/// normalized point.
pub fn bilinear_backward(
    map: &FeatureMap,
    point: (f64, f64),
    upstream: &[f64],
    grad_map: &mut FeatureMap,
) -> Result<(f64, f64)> {
    check_point(point)?;
    let taps = BilinearTaps::new(map.height(), map.width(), point.0, point.1);
    let n = map.plane_len();
    let (mut gx, mut gy) = (0.0, 0.0);
    for (c, g) in upstream.iter().enumerate().take(map.channels()) {
        let (sx, sy) = taps.sample_grad(map.channel(c));
        gx += g * sx;
        gy += g * sy;
        taps.scatter(*g, &mut grad_map.data_mut()[c * n..(c + 1) * n]);
    }
    Ok((gx, gy))
}
