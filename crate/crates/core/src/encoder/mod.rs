//! Hybrid encoder: per-level channel unification, self-attention on the
//! coarsest map, and top-down cross-scale fusion with GELAN blocks.

mod attention;
mod gelan;

use alloc::vec::Vec;

pub use attention::{self_attention_smallest, AttentionCache, MultiHeadAttention};
pub use gelan::{
    block_flops, fuse_kernels, fusion_discrepancy, gelan_backward, gelan_block, gelan_forward, gelan_forward_cached, upsample_nearest2,
    GelanBranchParams, GelanCache, GelanMode, GelanParams, BRANCH_SHAPES,
};

use crate::error::{config_err, shape_err};
use crate::numerics::{Conv2d, FeatureMap};
use crate::params::param_set;
use crate::rng::Rng;
use crate::Result;

/// Applies one 1x1 projection per level so every map ends up with the same
/// channel count.
pub fn project_channels(maps: &[FeatureMap], proj: &[Conv2d]) -> Result<Vec<FeatureMap>> {
    if maps.len() != proj.len() {
        return Err(config_err!("{} maps but {} projections", maps.len(), proj.len()));
    }
    let out: Vec<FeatureMap> = maps.iter().zip(proj).map(|(m, p)| p.forward(m)).collect::<Result<_>>()?;
    if let Some(first) = out.first() {
        if out.iter().any(|m| m.channels() != first.channels()) {
            return Err(shape_err!("projections disagree on output width"));
        }
    }
    Ok(out)
}

/// Shape knobs of [`EncoderParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderShape {
    pub dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub depth: usize,
}

/// Levels are ordered fine to coarse. `fuse[l]` merges level `l` with the
/// already fused level `l + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub proj: Vec<Conv2d>,
    pub attn: MultiHeadAttention,
    pub fuse: Vec<GelanParams>,
}

param_set!(EncoderParams { proj, attn, fuse });

impl EncoderParams {
    pub fn zeros(in_channels: &[usize], shape: EncoderShape) -> Self {
        let EncoderShape { dim, heads, hidden, depth } = shape;
        Self {
            proj: in_channels.iter().map(|&c| Conv2d::zeros(dim, c, 1, 1, 1)).collect(),
            attn: MultiHeadAttention::zeros(dim, heads),
            fuse: (1..in_channels.len()).map(|_| GelanParams::zeros(2 * dim, hidden, dim, depth)).collect(),
        }
    }

    pub fn init(in_channels: &[usize], shape: EncoderShape, rng: &mut Rng) -> Self {
        let EncoderShape { dim, heads, hidden, depth } = shape;
        Self {
            proj: in_channels.iter().map(|&c| Conv2d::init(dim, c, 1, 1, 1, 1.0, rng)).collect(),
            attn: MultiHeadAttention::init(dim, heads, rng),
            fuse: (1..in_channels.len())
                .map(|_| GelanParams::init(2 * dim, hidden, dim, depth, rng))
                .collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.proj.len()
    }
}

/// Intermediates for [`encoder_backward`].
#[derive(Clone, Debug)]
pub struct EncoderCache {
    inputs: Vec<FeatureMap>,
    projected_coarsest: FeatureMap,
    attn: AttentionCache,
    fuse: Vec<GelanCache>,
}

pub fn encoder_forward(
    params: &EncoderParams,
    maps: &[FeatureMap],
    mode: GelanMode,
) -> Result<(Vec<FeatureMap>, EncoderCache)> {
    if maps.is_empty() || params.fuse.len() + 1 != maps.len() {
        return Err(config_err!("encoder built for {} levels, got {}", params.levels(), maps.len()));
    }
    let projected = project_channels(maps, &params.proj)?;
    let last = maps.len() - 1;
    let (top, attn) = attention::self_attention_map(&projected[last], &params.attn)?;
    let mut outs: Vec<FeatureMap> = Vec::with_capacity(maps.len());
    outs.push(top);
    let mut caches = Vec::with_capacity(last);
    for l in (0..last).rev() {
        let lo = outs.last().expect("coarser level present");
        let (y, c) = gelan_forward_cached(&projected[l], lo, &params.fuse[l], mode)?;
        outs.push(y);
        caches.push(c);
    }
    outs.reverse();
    caches.reverse();
    let projected_coarsest = projected.into_iter().nth(last).expect("last level");
    Ok((
        outs,
        EncoderCache {
            inputs: maps.to_vec(),
            projected_coarsest,
            attn,
            fuse: caches,
        },
    ))
}

/// Backward of a train-mode pass; returns gradients of the input maps.
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    grad_out: &[FeatureMap],
    grad: &mut EncoderParams,
) -> Result<Vec<FeatureMap>> {
    let levels = params.levels();
    if grad_out.len() != levels {
        return Err(shape_err!("{} output gradients for {} levels", grad_out.len(), levels));
    }
    let last = levels - 1;
    let mut g_proj: Vec<Option<FeatureMap>> = (0..levels).map(|_| None).collect();
    // Running gradient of the fused output at the current coarser level.
    let mut carry = grad_out[0].clone();
    for l in 0..last {
        let (g_hi, g_lo) = gelan_backward(&params.fuse[l], &cache.fuse[l], &carry, &mut grad.fuse[l])?;
        g_proj[l] = Some(g_hi);
        carry = g_lo;
        carry.add_assign(&grad_out[l + 1]);
    }
    g_proj[last] = Some(attention::self_attention_map_backward(
        &cache.projected_coarsest,
        &params.attn,
        &cache.attn,
        &carry,
        &mut grad.attn,
    ));
    let mut out = Vec::with_capacity(levels);
    for (l, g) in g_proj.into_iter().enumerate() {
        let g = g.expect("every level visited");
        out.push(params.proj[l].backward(&cache.inputs[l], &g, &mut grad.proj[l])?);
    }
    Ok(out)
}
