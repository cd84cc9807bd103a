//! Line segments, logit-space anchors and top-k anchor generation.

use alloc::vec::Vec;

use crate::error::{config_err, shape_err};
use crate::numerics::{Linear, Tensor};
use crate::{Error, Result};

pub type Point = [f64; 2];

/// A segment between two normalized image points. The unordered pair
/// `{ep1, ep2}` is its identity; matching and metrics are order-invariant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSegment {
    pub ep1: Point,
    pub ep2: Point,
}

impl LineSegment {
    pub fn new(ep1: Point, ep2: Point) -> Self {
        Self { ep1, ep2 }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new([v[0], v[1]], [v[2], v[3]])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.ep1[0], self.ep1[1], self.ep2[0], self.ep2[1]]
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.ep2, self.ep1)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn length(&self) -> f64 {
        libm::hypot(self.ep1[0] - self.ep2[0], self.ep1[1] - self.ep2[1])
    }

    /// Segment read out of a logit-space anchor `(x1, y1, x2, y2)`.
    pub fn from_logits(anchor: &[f64]) -> Self {
        Self::new(
            [sigmoid(anchor[0]), sigmoid(anchor[1])],
            [sigmoid(anchor[2]), sigmoid(anchor[3])],
        )
    }
}

/// `(ep1 + ep2) / 2` and `ep1 - ep2`.
pub fn midpoint_delta(line: &LineSegment) -> (Point, Point) {
    let mid = [
        (line.ep1[0] + line.ep2[0]) / 2.0,
        (line.ep1[1] + line.ep2[1]) / 2.0,
    ];
    let delta = [line.ep1[0] - line.ep2[0], line.ep1[1] - line.ep2[1]];
    (mid, delta)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub const INVERSE_SIGMOID_EPS: f64 = 1e-5;

/// Log-odds of `x` after clamping into `[eps, 1 - eps]`.
pub fn inverse_sigmoid(x: f64) -> f64 {
    let x = x.clamp(INVERSE_SIGMOID_EPS, 1.0 - INVERSE_SIGMOID_EPS);
    libm::log(x / (1.0 - x))
}

/// Resolves flat indices into concatenated levels and returns pixel-center
/// normalized coordinates `((col + 0.5) / w, (row + 0.5) / h)` as `(k, 2)`.
pub fn get_norm_coords(indices: &[usize], level_shapes: &[(usize, usize)]) -> Result<Tensor> {
    let total: usize = level_shapes.iter().map(|(h, w)| h * w).sum();
    let mut data = Vec::with_capacity(indices.len() * 2);
    for &idx in indices {
        if idx >= total {
            return Err(Error::Bounds { index: idx, len: total });
        }
        let mut rest = idx;
        for &(h, w) in level_shapes {
            if rest < h * w {
                let (row, col) = (rest / w, rest % w);
                data.push((col as f64 + 0.5) / w as f64);
                data.push((row as f64 + 0.5) / h as f64);
                break;
            }
            rest -= h * w;
        }
    }
    Tensor::new(alloc::vec![indices.len(), 2], data)
}

/// Indices of the `k` largest values, ties broken by lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Output of [`generate_anchors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    /// `(k, 4)` logit-space endpoints `(x1, y1, x2, y2)`.
    pub anchors: Tensor,
    /// Flat pixel indices into the concatenated feature maps.
    pub source_indices: Vec<usize>,
    /// Instance logits of the selected pixels.
    pub proposals: Vec<f64>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    pub fn line(&self, i: usize) -> LineSegment {
        LineSegment::from_logits(&self.anchors.data()[i * 4..(i + 1) * 4])
    }
}

/// Anchor generation: score every pixel, keep the top `k`, start both
/// endpoints at the selected pixel center (in logit space) and add predicted
/// offsets from the selected pixels' features.
///
/// `concat_features` is `(N, d)` with levels concatenated in `level_shapes`
/// order.
pub fn generate_anchors(
    concat_features: &Tensor,
    k: usize,
    level_shapes: &[(usize, usize)],
    prob_head: &Linear,
    offset_head: &Linear,
) -> Result<AnchorSet> {
    let [n, d] = match *concat_features.shape() {
        [n, d] => [n, d],
        _ => return Err(shape_err!("features must be (N, d), got {:?}", concat_features.shape())),
    };
    let total: usize = level_shapes.iter().map(|(h, w)| h * w).sum();
    if total != n {
        return Err(shape_err!("level shapes cover {total} pixels, features have {n}"));
    }
    if k > n {
        return Err(config_err!("k = {k} exceeds the {n} available pixels"));
    }
    if prob_head.in_dim() != d || prob_head.out_dim() != 1 {
        return Err(shape_err!("prob head must map {d} -> 1"));
    }
    if offset_head.in_dim() != d || offset_head.out_dim() != 4 {
        return Err(shape_err!("offset head must map {d} -> 4"));
    }
    let logits = prob_head.forward(concat_features.data(), n);
    let indices = top_k(&logits, k);
    let proposals: Vec<f64> = indices.iter().map(|&i| logits[i]).collect();
    let coords = get_norm_coords(&indices, level_shapes)?;

    let mut selected = Vec::with_capacity(k * d);
    for &i in &indices {
        selected.extend_from_slice(&concat_features.data()[i * d..(i + 1) * d]);
    }
    let offsets = offset_head.forward(&selected, k);
    let mut anchors = Vec::with_capacity(k * 4);
    for q in 0..k {
        let cx = inverse_sigmoid(coords.data()[q * 2]);
        let cy = inverse_sigmoid(coords.data()[q * 2 + 1]);
        for (j, base) in [cx, cy, cx, cy].into_iter().enumerate() {
            anchors.push(base + offsets[q * 4 + j]);
        }
    }
    Ok(AnchorSet {
        anchors: Tensor::new(alloc::vec![k, 4], anchors)?,
        source_indices: indices,
        proposals,
    })
}
