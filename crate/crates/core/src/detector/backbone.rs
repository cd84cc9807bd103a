//! Strided convolutional backbone producing one feature map per stage.

use alloc::vec::Vec;

use crate::error::shape_err;
use crate::numerics::{Conv2d, FeatureMap};
use crate::params::param_set;
use crate::rng::Rng;
use crate::Result;

/// A stride-2 3x3 convolution followed by a residual 3x3 refinement, both
/// with SiLU.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneStage {
    pub down: Conv2d,
    pub refine: Conv2d,
}

param_set!(BackboneStage { down, refine });

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub stem: Conv2d,
    pub stages: Vec<BackboneStage>,
}

param_set!(BackboneParams { stem, stages });

impl BackboneParams {
    pub fn zeros(in_channels: usize, stem: usize, stem_stride: usize, stages: &[usize]) -> Self {
        let mut prev = stem;
        Self {
            stem: Conv2d::zeros(stem, in_channels, 3, 3, stem_stride),
            stages: stages
                .iter()
                .map(|&c| {
                    let s = BackboneStage {
                        down: Conv2d::zeros(c, prev, 3, 3, 2),
                        refine: Conv2d::zeros(c, c, 3, 3, 1),
                    };
                    prev = c;
                    s
                })
                .collect(),
        }
    }

    pub fn init(in_channels: usize, stem: usize, stem_stride: usize, stages: &[usize], rng: &mut Rng) -> Self {
        let mut prev = stem;
        Self {
            stem: Conv2d::init(stem, in_channels, 3, 3, stem_stride, 1.0, rng),
            stages: stages
                .iter()
                .map(|&c| {
                    let s = BackboneStage {
                        down: Conv2d::init(c, prev, 3, 3, 2, 1.0, rng),
                        refine: Conv2d::init(c, c, 3, 3, 1, 0.5, rng),
                    };
                    prev = c;
                    s
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct StageCache {
    input: FeatureMap,
    down_pre: FeatureMap,
    mid: FeatureMap,
    refine_pre: FeatureMap,
}

/// Intermediates for [`backbone_backward`].
#[derive(Clone, Debug)]
pub struct BackboneCache {
    image: FeatureMap,
    stem_pre: FeatureMap,
    stages: Vec<StageCache>,
}

/// Returns the output of every stage, finest first.
pub fn backbone_forward(params: &BackboneParams, image: &FeatureMap) -> Result<(Vec<FeatureMap>, BackboneCache)> {
    if image.channels() != params.stem.kernel.shape()[1] {
        return Err(shape_err!(
            "backbone expects {} image channels, got {}",
            params.stem.kernel.shape()[1],
            image.channels()
        ));
    }
    let stem_pre = params.stem.forward(image)?;
    let mut x = stem_pre.silu();
    let mut outs = Vec::with_capacity(params.stages.len());
    let mut stages = Vec::with_capacity(params.stages.len());
    for s in &params.stages {
        if x.height() % 2 != 0 || x.width() % 2 != 0 {
            return Err(shape_err!("odd {}x{} map cannot be halved", x.height(), x.width()));
        }
        let down_pre = s.down.forward(&x)?;
        let mid = down_pre.silu();
        let refine_pre = s.refine.forward(&mid)?;
        let mut y = refine_pre.silu();
        y.add_assign(&mid);
        stages.push(StageCache {
            input: x,
            down_pre,
            mid,
            refine_pre,
        });
        outs.push(y.clone());
        x = y;
    }
    Ok((
        outs,
        BackboneCache {
            image: image.clone(),
            stem_pre,
            stages,
        },
    ))
}

/// Accumulates parameter gradients given the gradient of every stage output.
pub fn backbone_backward(
    params: &BackboneParams,
    cache: &BackboneCache,
    grad_outs: &[FeatureMap],
    grad: &mut BackboneParams,
) -> Result<()> {
    if grad_outs.len() != params.stages.len() {
        return Err(shape_err!("{} gradients for {} stages", grad_outs.len(), params.stages.len()));
    }
    let mut carry: Option<FeatureMap> = None;
    for (i, (s, c)) in params.stages.iter().zip(&cache.stages).enumerate().rev() {
        let mut g = grad_outs[i].clone();
        if let Some(next) = carry.take() {
            g.add_assign(&next);
        }
        let g_pre = c.refine_pre.silu_backward(&g);
        let mut g_mid = s.refine.backward(&c.mid, &g_pre, &mut grad.stages[i].refine)?;
        g_mid.add_assign(&g);
        let g_down = c.down_pre.silu_backward(&g_mid);
        carry = Some(s.down.backward(&c.input, &g_down, &mut grad.stages[i].down)?);
    }
    if let Some(g) = carry {
        let g_pre = cache.stem_pre.silu_backward(&g);
        params.stem.backward(&cache.image, &g_pre, &mut grad.stem)?;
    }
    Ok(())
}
