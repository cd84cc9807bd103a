//! Deformable line attention.
//!
//! Each query carries a line `(ep1, ep2)`. Two linear heads turn the query's
//! content vector into steplengths `alpha` and attention logits, one per
//! `(head, level, point)`. Sampling point `t` of head `m` sits at
//!
//! ```text
//! p = alpha[m, t] * (ep1 - ep2) + (ep1 + ep2) / 2
//! ```
//!
//! so every sample lies on the line through the two endpoints, and
//! `alpha = +1/2` / `-1/2` land on `ep1` / `ep2`. The point is evaluated in
//! the equivalent form `(alpha + 1/2) ep1 + (1/2 - alpha) ep2`, which makes
//! those two cases exact in floating point. Attention logits are
//! softmax-normalized over all samples of a head, the value-projected
//! feature maps are sampled bilinearly at the points, and the weighted sums of
//! every head are concatenated and passed through an output projection.
//!
//! The `(level, point)` axes are ragged when levels use different point
//! counts, e.g. `(4, 1, 1)`, so they are flattened level-major into a single
//! sample axis of length `T = sum(points_per_level)`.

mod flops;
mod gradcheck;

pub use flops::{count_flops, count_mda_flops, FlopBreakdown};
pub use gradcheck::{gradcheck_instance, GradcheckReport};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, shape_err};
use crate::geometry::{midpoint_delta, LineSegment, Point};
use crate::numerics::{
    softmax_backward_in_place, softmax_in_place, BilinearTaps, FeatureMap, Linear, Tensor,
};
use crate::params::{param_set, ParamSet};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DlaConfig {
    /// Attention heads `M`.
    pub heads: usize,
    /// Samples per feature level; its length is the level count `L`.
    pub points_per_level: Vec<usize>,
    /// Embedding width `d`, split into `M` contiguous head slices.
    pub dim: usize,
}

impl DlaConfig {
    pub fn new(heads: usize, points_per_level: Vec<usize>, dim: usize) -> Result<Self> {
        let c = Self {
            heads,
            points_per_level,
            dim,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return Err(config_err!(
                "embedding width {} must be a positive multiple of the head count {}",
                self.dim,
                self.heads
            ));
        }
        if self.points_per_level.is_empty() || self.points_per_level.contains(&0) {
            return Err(config_err!(
                "every level needs at least one sampling point, got {:?}",
                self.points_per_level
            ));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.points_per_level.len()
    }

    pub fn total_points(&self) -> usize {
        self.points_per_level.iter().sum()
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Level index of every flattened sample.
    pub fn sample_levels(&self) -> Vec<usize> {
        self.points_per_level
            .iter()
            .enumerate()
            .flat_map(|(l, &p)| core::iter::repeat(l).take(p))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DlaParams {
    /// `d -> M*T`, steplengths.
    pub alpha_head: Linear,
    /// `d -> M*T`, attention logits.
    pub attn_head: Linear,
    /// One `channels -> d` projection per level, applied at every pixel.
    pub value_proj: Vec<Linear>,
    pub out_proj: Linear,
}

param_set!(DlaParams {
    alpha_head,
    attn_head,
    value_proj,
    out_proj
});

impl DlaParams {
    pub fn zeros(config: &DlaConfig, level_channels: &[usize]) -> Self {
        let mt = config.heads * config.total_points();
        Self {
            alpha_head: Linear::zeros(config.dim, mt),
            attn_head: Linear::zeros(config.dim, mt),
            value_proj: level_channels
                .iter()
                .map(|&c| Linear::zeros(c, config.dim))
                .collect(),
            out_proj: Linear::zeros(config.dim, config.dim),
        }
    }

    /// Training initialization: zero steplength weights with biases spread
    /// evenly over `[-1/2, 1/2]` within each level (a single point sits at the
    /// midpoint), zero attention head (uniform weights), Glorot projections.
    pub fn init(config: &DlaConfig, level_channels: &[usize], rng: &mut Rng) -> Self {
        let mut p = Self::zeros(config, level_channels);
        let spread = initial_steplengths(config);
        for m in 0..config.heads {
            let row = &mut p.alpha_head.bias.data_mut()[m * spread.len()..(m + 1) * spread.len()];
            row.copy_from_slice(&spread);
        }
        p.value_proj = level_channels
            .iter()
            .map(|&c| Linear::xavier(c, config.dim, rng))
            .collect();
        p.out_proj = Linear::xavier(config.dim, config.dim, rng);
        p
    }

    fn check(&self, config: &DlaConfig) -> Result<()> {
        let mt = config.heads * config.total_points();
        let ok = self.alpha_head.in_dim() == config.dim
            && self.alpha_head.out_dim() == mt
            && self.attn_head.in_dim() == config.dim
            && self.attn_head.out_dim() == mt
            && self.out_proj.in_dim() == config.dim
            && self.out_proj.out_dim() == config.dim
            && self.value_proj.len() == config.levels()
            && self.value_proj.iter().all(|v| v.out_dim() == config.dim);
        if ok {
            Ok(())
        } else {
            Err(shape_err!("DLA parameters do not match {:?}", config))
        }
    }
}

/// Per-level evenly spaced steplengths in `[-1/2, 1/2]`, level-major.
pub fn initial_steplengths(config: &DlaConfig) -> Vec<f64> {
    let mut v = Vec::with_capacity(config.total_points());
    for &p in &config.points_per_level {
        for i in 0..p {
            v.push(if p == 1 {
                0.0
            } else {
                -0.5 + i as f64 / (p - 1) as f64
            });
        }
    }
    v
}

/// Sampling locations: `alpha`'s shape with a trailing axis of 2.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingTensor {
    pub points: Tensor,
}

impl SamplingTensor {
    pub fn point(&self, i: usize) -> Point {
        [self.points.data()[2 * i], self.points.data()[2 * i + 1]]
    }

    pub fn len(&self) -> usize {
        self.points.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Normalized attention weights, `(M, T)` or `(M, L, P)`; each head sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTensor {
    pub weights: Tensor,
}

impl AttentionTensor {
    /// Softmax over each head's samples.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let m = *logits
            .shape()
            .first()
            .ok_or_else(|| shape_err!("attention logits need a head axis"))?;
        let mut w = logits.clone();
        if m > 0 && !w.is_empty() {
            let group = w.len() / m;
            for head in w.data_mut().chunks_mut(group) {
                softmax_in_place(head);
            }
        }
        Ok(Self { weights: w })
    }
}

#[inline]
fn point_on_line(line: &LineSegment, alpha: f64) -> Point {
    let (u, v) = (alpha + 0.5, 0.5 - alpha);
    [
        u * line.ep1[0] + v * line.ep2[0],
        u * line.ep1[1] + v * line.ep2[1],
    ]
}

/// `alpha * (ep1 - ep2) + (ep1 + ep2) / 2` for every steplength.
pub fn sampling_points(line: &LineSegment, alpha: &Tensor) -> SamplingTensor {
    let mut pts = Vec::with_capacity(alpha.len() * 2);
    for a in alpha.data() {
        pts.extend_from_slice(&point_on_line(line, *a));
    }
    let mut shape = alpha.shape().to_vec();
    shape.push(2);
    SamplingTensor {
        points: Tensor::new(shape, pts).expect("shape derived from alpha"),
    }
}

fn check_values(config: &DlaConfig, values: &[FeatureMap]) -> Result<()> {
    if values.len() != config.levels() {
        return Err(shape_err!(
            "DLA expects {} feature levels, got {}",
            config.levels(),
            values.len()
        ));
    }
    if let Some(v) = values.iter().find(|v| v.channels() != config.dim) {
        return Err(shape_err!(
            "value maps need {} channels, got {}",
            config.dim,
            v.channels()
        ));
    }
    Ok(())
}

fn check_samples(config: &DlaConfig, s: &SamplingTensor, a: &AttentionTensor) -> Result<()> {
    let mt = config.heads * config.total_points();
    if s.len() != mt || a.weights.len() != mt {
        return Err(shape_err!(
            "expected {mt} samples, got {} points and {} weights",
            s.len(),
            a.weights.len()
        ));
    }
    Ok(())
}

/// Attention-weighted sum of bilinear samples per head, before the output
/// projection. `values` are the value-projected maps, `d` channels each.
pub fn dla_aggregate(
    config: &DlaConfig,
    values: &[FeatureMap],
    s: &SamplingTensor,
    a: &AttentionTensor,
) -> Result<Vec<f64>> {
    check_values(config, values)?;
    check_samples(config, s, a)?;
    let mut out = vec![0.0; config.dim];
    aggregate_into(config, &config.sample_levels(), values, s.points.data(), a.weights.data(), &mut out);
    Ok(out)
}

fn aggregate_into(
    config: &DlaConfig,
    sample_levels: &[usize],
    values: &[FeatureMap],
    points: &[f64],
    weights: &[f64],
    out: &mut [f64],
) {
    let t_count = sample_levels.len();
    let dh = config.head_dim();
    for m in 0..config.heads {
        for (t, &l) in sample_levels.iter().enumerate() {
            let i = m * t_count + t;
            let map = &values[l];
            let taps = BilinearTaps::new(map.height(), map.width(), points[2 * i], points[2 * i + 1]);
            let w = weights[i];
            for c in 0..dh {
                let ch = m * dh + c;
                out[ch] += w * taps.sample(map.channel(ch));
            }
        }
    }
}

/// One query's attention output: aggregation followed by `out_proj`.
pub fn dla_forward(
    config: &DlaConfig,
    values: &[FeatureMap],
    s: &SamplingTensor,
    a: &AttentionTensor,
    out_proj: &Linear,
) -> Result<Vec<f64>> {
    if !s.points.is_finite() {
        return Err(Error::Domain("non-finite sampling point".into()));
    }
    let agg = dla_aggregate(config, values, s, a)?;
    Ok(out_proj.forward(&agg, 1))
}

/// Applies a per-pixel linear map to every pixel of a feature map.
pub fn project_map(map: &FeatureMap, proj: &Linear) -> FeatureMap {
    let tokens = map.to_tokens();
    let out = proj.forward(&tokens, map.plane_len());
    FeatureMap::from_tokens(proj.out_dim(), map.height(), map.width(), &out)
}

fn project_map_backward(
    map: &FeatureMap,
    proj: &Linear,
    grad_out: &FeatureMap,
    grad_proj: &mut Linear,
) -> FeatureMap {
    let tokens = map.to_tokens();
    let g = grad_out.to_tokens();
    let dx = proj.backward(&tokens, map.plane_len(), &g, grad_proj);
    FeatureMap::from_tokens(map.channels(), map.height(), map.width(), &dx)
}

/// Value-projects each level.
pub fn project_values(params: &DlaParams, features: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
    if features.len() != params.value_proj.len() {
        return Err(shape_err!(
            "{} feature levels for {} value projections",
            features.len(),
            params.value_proj.len()
        ));
    }
    features
        .iter()
        .zip(&params.value_proj)
        .map(|(f, p)| {
            if f.channels() != p.in_dim() {
                Err(shape_err!("value projection expects {} channels, got {}", p.in_dim(), f.channels()))
            } else {
                Ok(project_map(f, p))
            }
        })
        .collect()
}

/// Full single-query attention: steplengths and weights from the content
/// vector, sampling along `line`, aggregation over the projected features.
pub fn dla_attention(
    config: &DlaConfig,
    query_content: &[f64],
    line: &LineSegment,
    features: &[FeatureMap],
    params: &DlaParams,
) -> Result<Vec<f64>> {
    let mut tape = DlaTape::default();
    let out = dla_forward_batch(config, params, features, query_content, core::slice::from_ref(line), &mut tape)?;
    Ok(out)
}

/// State saved by [`dla_forward_batch`] for [`dla_backward`].
#[derive(Clone, Debug, Default)]
pub struct DlaTape {
    saved: Option<Saved>,
}

#[derive(Clone, Debug)]
struct Saved {
    values: Vec<FeatureMap>,
    queries: Vec<f64>,
    lines: Vec<LineSegment>,
    alpha: Vec<f64>,
    weights: Vec<f64>,
    points: Vec<f64>,
    aggregated: Vec<f64>,
}

impl DlaTape {
    pub fn is_recorded(&self) -> bool {
        self.saved.is_some()
    }

    /// Value-projected maps of the recorded pass.
    pub fn values(&self) -> Option<&[FeatureMap]> {
        self.saved.as_ref().map(|s| s.values.as_slice())
    }

    /// `(M, T, 2)` sampling points of query `q`.
    pub fn sampling(&self, config: &DlaConfig, q: usize) -> Option<SamplingTensor> {
        let s = self.saved.as_ref()?;
        let mt = config.heads * config.total_points();
        let pts = s.points[q * mt * 2..(q + 1) * mt * 2].to_vec();
        Tensor::new(vec![config.heads, config.total_points(), 2], pts)
            .ok()
            .map(|points| SamplingTensor { points })
    }

    /// `(M, T)` attention weights of query `q`.
    pub fn attention(&self, config: &DlaConfig, q: usize) -> Option<AttentionTensor> {
        let s = self.saved.as_ref()?;
        let mt = config.heads * config.total_points();
        Tensor::new(vec![config.heads, config.total_points()], s.weights[q * mt..(q + 1) * mt].to_vec())
            .ok()
            .map(|weights| AttentionTensor { weights })
    }
}

/// Batched attention for `k` queries (`queries` is `(k, d)`) sharing the same
/// feature maps. Returns `(k, d)` outputs and records the pass in `tape`.
pub fn dla_forward_batch(
    config: &DlaConfig,
    params: &DlaParams,
    features: &[FeatureMap],
    queries: &[f64],
    lines: &[LineSegment],
    tape: &mut DlaTape,
) -> Result<Vec<f64>> {
    config.validate()?;
    params.check(config)?;
    let d = config.dim;
    let k = lines.len();
    if queries.len() != k * d {
        return Err(shape_err!("{} query values for {k} lines of width {d}", queries.len()));
    }
    if let Some(l) = lines.iter().find(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("line {:?}", l)));
    }
    let values = project_values(params, features)?;
    check_values(config, &values)?;

    let mt = config.heads * config.total_points();
    let levels = config.sample_levels();
    let alpha = params.alpha_head.forward(queries, k);
    let mut weights = params.attn_head.forward(queries, k);
    for head in weights.chunks_mut(config.total_points()) {
        softmax_in_place(head);
    }
    let mut points = vec![0.0; k * mt * 2];
    for (q, line) in lines.iter().enumerate() {
        for i in 0..mt {
            let p = point_on_line(line, alpha[q * mt + i]);
            points[(q * mt + i) * 2..(q * mt + i) * 2 + 2].copy_from_slice(&p);
        }
    }
    let mut aggregated = vec![0.0; k * d];
    for q in 0..k {
        aggregate_into(
            config,
            &levels,
            &values,
            &points[q * mt * 2..(q + 1) * mt * 2],
            &weights[q * mt..(q + 1) * mt],
            &mut aggregated[q * d..(q + 1) * d],
        );
    }
    let out = params.out_proj.forward(&aggregated, k);
    tape.saved = Some(Saved {
        values,
        queries: queries.to_vec(),
        lines: lines.to_vec(),
        alpha,
        weights,
        points,
        aggregated,
    });
    Ok(out)
}

/// Gradients of the inputs of [`dla_forward_batch`].
#[derive(Clone, Debug, PartialEq)]
pub struct DlaInputGrads {
    /// `(k, d)`.
    pub queries: Vec<f64>,
    pub ep1: Vec<Point>,
    pub ep2: Vec<Point>,
    /// Gradients of the raw (pre value projection) feature maps.
    pub features: Vec<FeatureMap>,
}

/// Analytic backward of [`dla_forward_batch`]. Parameter gradients are
/// accumulated into `grads`.
pub fn dla_backward(
    config: &DlaConfig,
    params: &DlaParams,
    features: &[FeatureMap],
    tape: &DlaTape,
    upstream: &[f64],
    grads: &mut DlaParams,
) -> Result<DlaInputGrads> {
    let saved = tape
        .saved
        .as_ref()
        .ok_or_else(|| Error::Usage("dla_backward called before a recorded forward pass".into()))?;
    let d = config.dim;
    let k = saved.lines.len();
    if upstream.len() != k * d {
        return Err(shape_err!("upstream gradient has {} values, expected {}", upstream.len(), k * d));
    }
    let mt = config.heads * config.total_points();
    let t_count = config.total_points();
    let dh = config.head_dim();
    let levels = config.sample_levels();

    let dagg = params.out_proj.backward(&saved.aggregated, k, upstream, &mut grads.out_proj);
    let mut dvalues: Vec<FeatureMap> = saved.values.iter().map(|v| v.zeros_like()).collect();
    let mut dalpha = vec![0.0; k * mt];
    let mut dlogits = vec![0.0; k * mt];
    let mut ep1 = vec![[0.0; 2]; k];
    let mut ep2 = vec![[0.0; 2]; k];

    for q in 0..k {
        let (_, delta) = midpoint_delta(&saved.lines[q]);
        let g = &dagg[q * d..(q + 1) * d];
        for m in 0..config.heads {
            for (t, &l) in levels.iter().enumerate() {
                let i = q * mt + m * t_count + t;
                let map = &saved.values[l];
                let n = map.plane_len();
                let taps = BilinearTaps::new(
                    map.height(),
                    map.width(),
                    saved.points[2 * i],
                    saved.points[2 * i + 1],
                );
                let w = saved.weights[i];
                let (mut da, mut gx, mut gy) = (0.0, 0.0, 0.0);
                for c in 0..dh {
                    let ch = m * dh + c;
                    let plane = map.channel(ch);
                    let gc = g[ch];
                    da += gc * taps.sample(plane);
                    let (sx, sy) = taps.sample_grad(plane);
                    gx += w * gc * sx;
                    gy += w * gc * sy;
                    taps.scatter(w * gc, &mut dvalues[l].data_mut()[ch * n..(ch + 1) * n]);
                }
                dlogits[i] = da;
                let a = saved.alpha[i];
                dalpha[i] = gx * delta[0] + gy * delta[1];
                ep1[q][0] += (a + 0.5) * gx;
                ep1[q][1] += (a + 0.5) * gy;
                ep2[q][0] += (0.5 - a) * gx;
                ep2[q][1] += (0.5 - a) * gy;
            }
        }
    }
    for (head_w, head_g) in saved.weights.chunks(t_count).zip(dlogits.chunks_mut(t_count)) {
        softmax_backward_in_place(head_w, head_g);
    }
    let mut dq = params.alpha_head.backward(&saved.queries, k, &dalpha, &mut grads.alpha_head);
    let dq_attn = params.attn_head.backward(&saved.queries, k, &dlogits, &mut grads.attn_head);
    for (a, b) in dq.iter_mut().zip(dq_attn) {
        *a += b;
    }
    let dfeatures = features
        .iter()
        .zip(&params.value_proj)
        .zip(grads.value_proj.iter_mut())
        .zip(&dvalues)
        .map(|(((f, p), gp), dv)| project_map_backward(f, p, dv, gp))
        .collect();
    Ok(DlaInputGrads {
        queries: dq,
        ep1,
        ep2,
        features: dfeatures,
    })
}

/// Zero-valued gradient accumulator shaped like `params`.
pub fn zero_grads(params: &DlaParams) -> DlaParams {
    let mut g = params.clone();
    g.zero();
    g
}

#[cfg(test)]
mod tests;
