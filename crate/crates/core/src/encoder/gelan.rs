//! Cross-scale fusion block with parallel asymmetric convolution branches.
//!
//! Each residual block sums four parallel convolutions over the same input:
//! 3x3, 1x3, 3x1 and 1x1. Convolution is linear in the kernel, so zero-padding
//! the smaller kernels to 3x3 (centered) and adding everything gives a single
//! 3x3 kernel with the same output. Training uses the branches, deployment the
//! fused kernel.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::numerics::{Conv2d, FeatureMap, Tensor};
use crate::params::{param_set, ParamSet};
use crate::rng::Rng;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GelanMode {
    /// Four parallel branches per block.
    Train,
    /// One fused 3x3 convolution per block.
    Deploy,
}

/// Parallel branches of one residual block, all `C -> C`.
#[derive(Clone, Debug, PartialEq)]
pub struct GelanBranchParams {
    pub k3x3: Conv2d,
    pub k1x3: Conv2d,
    pub k3x1: Conv2d,
    pub k1x1: Conv2d,
}

param_set!(GelanBranchParams { k3x3, k1x3, k3x1, k1x1 });

impl GelanBranchParams {
    pub fn zeros(c: usize) -> Self {
        Self {
            k3x3: Conv2d::zeros(c, c, 3, 3, 1),
            k1x3: Conv2d::zeros(c, c, 1, 3, 1),
            k3x1: Conv2d::zeros(c, c, 3, 1, 1),
            k1x1: Conv2d::zeros(c, c, 1, 1, 1),
        }
    }

    pub fn init(c: usize, rng: &mut Rng) -> Self {
        // Four summed branches: shrink each so the sum keeps unit-ish gain.
        let g = 0.5;
        Self {
            k3x3: Conv2d::init(c, c, 3, 3, 1, g, rng),
            k1x3: Conv2d::init(c, c, 1, 3, 1, g, rng),
            k3x1: Conv2d::init(c, c, 3, 1, 1, g, rng),
            k1x1: Conv2d::init(c, c, 1, 1, 1, g, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.k3x3.out_channels()
    }

    fn branches(&self) -> [&Conv2d; 4] {
        [&self.k3x3, &self.k1x3, &self.k3x1, &self.k1x1]
    }

    fn check(&self) -> Result<()> {
        let c = self.hidden_dim();
        let want: [[usize; 4]; 4] = [[c, c, 3, 3], [c, c, 1, 3], [c, c, 3, 1], [c, c, 1, 1]];
        for (b, w) in self.branches().iter().zip(want) {
            if b.kernel.shape() != w || b.bias.len() != c || b.stride != 1 {
                return Err(shape_err!(
                    "branch kernel {:?} does not match {:?}",
                    b.kernel.shape(),
                    w
                ));
            }
        }
        Ok(())
    }
}

/// Folds all four branches into one `(C, C, 3, 3)` kernel and bias.
pub fn fuse_kernels(params: &GelanBranchParams) -> Result<(Tensor, Vec<f64>)> {
    params.check()?;
    let c = params.hidden_dim();
    let mut kernel = Tensor::zeros(&[c, c, 3, 3]);
    let mut bias = vec![0.0; c];
    for b in params.branches() {
        let (kh, kw) = (b.kernel.shape()[2], b.kernel.shape()[3]);
        let (oy, ox) = ((3 - kh) / 2, (3 - kw) / 2);
        for o in 0..c {
            for i in 0..c {
                for y in 0..kh {
                    for x in 0..kw {
                        let src = b.kernel.data()[((o * c + i) * kh + y) * kw + x];
                        kernel.data_mut()[((o * c + i) * 3 + y + oy) * 3 + x + ox] += src;
                    }
                }
            }
        }
        for (acc, v) in bias.iter_mut().zip(b.bias.data()) {
            *acc += v;
        }
    }
    Ok((kernel, bias))
}

/// Pre-activation of one block: the sum of the branch outputs.
fn block_preact(x: &FeatureMap, p: &GelanBranchParams, mode: GelanMode) -> Result<FeatureMap> {
    match mode {
        GelanMode::Train => {
            let mut s = p.k3x3.forward(x)?;
            for b in &p.branches()[1..] {
                s.add_assign(&b.forward(x)?);
            }
            Ok(s)
        }
        GelanMode::Deploy => {
            let (k, b) = fuse_kernels(p)?;
            crate::numerics::conv2d(x, &k, &b, (1, 1))
        }
    }
}

/// One residual block: `x + silu(branches(x))`.
pub fn gelan_block(x: &FeatureMap, p: &GelanBranchParams, mode: GelanMode) -> Result<FeatureMap> {
    let mut y = block_preact(x, p, mode)?.silu();
    y.add_assign(x);
    Ok(y)
}

/// Fusion of a fine map with the next coarser one: nearest 2x upsampling of
/// `lo`, channel concatenation, a 1x1 reduction to the hidden width, `depth`
/// residual branch blocks, and a 1x1 expansion back to the output width.
#[derive(Clone, Debug, PartialEq)]
pub struct GelanParams {
    pub reduce: Conv2d,
    pub blocks: Vec<GelanBranchParams>,
    pub expand: Conv2d,
}

param_set!(GelanParams { reduce, blocks, expand });

impl GelanParams {
    pub fn zeros(in_channels: usize, hidden: usize, out_channels: usize, depth: usize) -> Self {
        Self {
            reduce: Conv2d::zeros(hidden, in_channels, 1, 1, 1),
            blocks: (0..depth).map(|_| GelanBranchParams::zeros(hidden)).collect(),
            expand: Conv2d::zeros(out_channels, hidden, 1, 1, 1),
        }
    }

    pub fn init(in_channels: usize, hidden: usize, out_channels: usize, depth: usize, rng: &mut Rng) -> Self {
        Self {
            reduce: Conv2d::init(hidden, in_channels, 1, 1, 1, 1.0, rng),
            blocks: (0..depth).map(|_| GelanBranchParams::init(hidden, rng)).collect(),
            expand: Conv2d::init(out_channels, hidden, 1, 1, 1, 1.0, rng),
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

pub fn upsample_nearest2(map: &FeatureMap) -> FeatureMap {
    let (h, w) = (map.height(), map.width());
    FeatureMap::from_fn(map.channels(), 2 * h, 2 * w, |c, y, x| map.at(c, y / 2, x / 2))
}

fn upsample_nearest2_backward(grad: &FeatureMap) -> FeatureMap {
    let (h, w) = (grad.height() / 2, grad.width() / 2);
    FeatureMap::from_fn(grad.channels(), h, w, |c, y, x| {
        grad.at(c, 2 * y, 2 * x)
            + grad.at(c, 2 * y, 2 * x + 1)
            + grad.at(c, 2 * y + 1, 2 * x)
            + grad.at(c, 2 * y + 1, 2 * x + 1)
    })
}

fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    FeatureMap::new(a.channels() + b.channels(), a.height(), a.width(), data).expect("same plane")
}

fn split_channels(m: &FeatureMap, first: usize) -> (FeatureMap, FeatureMap) {
    let n = m.plane_len();
    let (a, b) = m.data().split_at(first * n);
    (
        FeatureMap::new(first, m.height(), m.width(), a.to_vec()).expect("split"),
        FeatureMap::new(m.channels() - first, m.height(), m.width(), b.to_vec()).expect("split"),
    )
}

/// Intermediates for [`gelan_backward`].
#[derive(Clone, Debug)]
pub struct GelanCache {
    hi_channels: usize,
    concat: FeatureMap,
    reduce_pre: FeatureMap,
    /// Input and branch pre-activation of every block.
    blocks: Vec<(FeatureMap, FeatureMap)>,
    expand_in: FeatureMap,
}

pub fn gelan_forward(hi: &FeatureMap, lo: &FeatureMap, params: &GelanParams, mode: GelanMode) -> Result<FeatureMap> {
    Ok(gelan_forward_cached(hi, lo, params, mode)?.0)
}

pub fn gelan_forward_cached(
    hi: &FeatureMap,
    lo: &FeatureMap,
    params: &GelanParams,
    mode: GelanMode,
) -> Result<(FeatureMap, GelanCache)> {
    if 2 * lo.height() != hi.height() || 2 * lo.width() != hi.width() {
        return Err(shape_err!(
            "cannot fuse {}x{} with {}x{} after 2x upsampling",
            hi.height(),
            hi.width(),
            lo.height(),
            lo.width()
        ));
    }
    let concat = concat_channels(hi, &upsample_nearest2(lo));
    let reduce_pre = params.reduce.forward(&concat)?;
    let mut x = reduce_pre.silu();
    let mut blocks = Vec::with_capacity(params.depth());
    for b in &params.blocks {
        let pre = block_preact(&x, b, mode)?;
        let mut y = pre.silu();
        y.add_assign(&x);
        blocks.push((x, pre));
        x = y;
    }
    let out = params.expand.forward(&x)?;
    Ok((
        out,
        GelanCache {
            hi_channels: hi.channels(),
            concat,
            reduce_pre,
            blocks,
            expand_in: x,
        },
    ))
}

/// Backward of a train-mode pass; returns `(d hi, d lo)`.
pub fn gelan_backward(
    params: &GelanParams,
    cache: &GelanCache,
    grad_out: &FeatureMap,
    grad: &mut GelanParams,
) -> Result<(FeatureMap, FeatureMap)> {
    let mut g = params.expand.backward(&cache.expand_in, grad_out, &mut grad.expand)?;
    for ((b, gb), (x, pre)) in params
        .blocks
        .iter()
        .zip(grad.blocks.iter_mut())
        .zip(&cache.blocks)
        .rev()
    {
        let gpre = pre.silu_backward(&g);
        let mut gx = g;
        gx.add_assign(&b.k3x3.backward(x, &gpre, &mut gb.k3x3)?);
        gx.add_assign(&b.k1x3.backward(x, &gpre, &mut gb.k1x3)?);
        gx.add_assign(&b.k3x1.backward(x, &gpre, &mut gb.k3x1)?);
        gx.add_assign(&b.k1x1.backward(x, &gpre, &mut gb.k1x1)?);
        g = gx;
    }
    let g = cache.reduce_pre.silu_backward(&g);
    let gc = params.reduce.backward(&cache.concat, &g, &mut grad.reduce)?;
    let (ghi, gup) = split_channels(&gc, cache.hi_channels);
    Ok((ghi, upsample_nearest2_backward(&gup)))
}

/// FLOPs of one block over an `h x w` map with `c` channels. In deploy mode
/// every block is one 3x3 convolution whatever its training branches were.
pub fn block_flops(c: usize, h: usize, w: usize, branches: &[(usize, usize)], mode: GelanMode) -> u64 {
    let (c, hw) = (c as u64, (h * w) as u64);
    match mode {
        GelanMode::Train => {
            let convs: u64 = branches.iter().map(|(kh, kw)| 2 * c * c * (kh * kw) as u64 * hw).sum();
            convs + branches.len().saturating_sub(1) as u64 * c * hw
        }
        GelanMode::Deploy => 2 * c * c * 9 * hw,
    }
}

/// Branch shapes of [`GelanBranchParams`].
pub const BRANCH_SHAPES: [(usize, usize); 4] = [(3, 3), (1, 3), (3, 1), (1, 1)];

/// Largest absolute difference between train-mode and deploy-mode outputs of
/// a full fusion stage with random parameters, biases and inputs. Draws are
/// keyed by `(seed, draw)`.
pub fn fusion_discrepancy(seed: u64, draw: u64) -> Result<f64> {
    let mut rng = Rng::new(seed, draw);
    let c_hi = 1 + rng.below(4) as usize;
    let c_lo = 1 + rng.below(4) as usize;
    let hidden = 1 + rng.below(4) as usize;
    let out = 1 + rng.below(4) as usize;
    let depth = 1 + rng.below(3) as usize;
    let (h, w) = (1 + rng.below(4) as usize, 1 + rng.below(4) as usize);
    let mut params = GelanParams::zeros(c_hi + c_lo, hidden, out, depth);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.range(-1.0, 1.0));
    }
    let lo = FeatureMap::from_fn(c_lo, h, w, |_, _, _| rng.range(-1.0, 1.0));
    let hi = FeatureMap::from_fn(c_hi, 2 * h, 2 * w, |_, _, _| rng.range(-1.0, 1.0));
    let train = gelan_forward(&hi, &lo, &params, GelanMode::Train)?;
    let deploy = gelan_forward(&hi, &lo, &params, GelanMode::Deploy)?;
    Ok(train.values().max_abs_diff(deploy.values()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{conv2d, finite_difference_slice, relative_error};

    fn randomize<P: ParamSet>(p: &mut P, rng: &mut Rng, scale: f64) {
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.range(-scale, scale));
        }
    }

    fn rand_map(rng: &mut Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.range(-1.0, 1.0))
    }

    #[test]
    fn one_by_one_lands_in_center() {
        let mut p = GelanBranchParams::zeros(1);
        p.k1x1.kernel.data_mut()[0] = 0.7;
        let (k, b) = fuse_kernels(&p).unwrap();
        let mut want = [0.0; 9];
        want[4] = 0.7;
        assert_eq!(k.data(), &want);
        assert_eq!(b, vec![0.0]);
    }

    #[test]
    fn lone_three_by_three_is_unchanged() {
        let mut rng = Rng::new(1, 0);
        let mut p = GelanBranchParams::zeros(2);
        randomize(&mut p.k3x3, &mut rng, 1.0);
        let (k, b) = fuse_kernels(&p).unwrap();
        assert_eq!(k, p.k3x3.kernel);
        assert_eq!(b, p.k3x3.bias.data().to_vec());
    }

    #[test]
    fn fused_conv_equals_branch_sum() {
        let mut rng = Rng::new(2, 0);
        for _ in 0..100 {
            let c = 1 + rng.below(3) as usize;
            let mut p = GelanBranchParams::zeros(c);
            randomize(&mut p, &mut rng, 1.0);
            let (h, w) = (2 + rng.below(5) as usize, 2 + rng.below(5) as usize);
            let x = rand_map(&mut rng, c, h, w);
            let (k, b) = fuse_kernels(&p).unwrap();
            let fused = conv2d(&x, &k, &b, (1, 1)).unwrap();
            let summed = block_preact(&x, &p, GelanMode::Train).unwrap();
            assert!(fused.values().max_abs_diff(summed.values()) < 1e-10);
        }
    }

    #[test]
    fn zero_block_is_identity() {
        let mut rng = Rng::new(3, 0);
        let x = rand_map(&mut rng, 3, 4, 4);
        let p = GelanBranchParams::zeros(3);
        for mode in [GelanMode::Train, GelanMode::Deploy] {
            assert_eq!(gelan_block(&x, &p, mode).unwrap(), x);
        }
    }

    #[test]
    fn lone_three_by_three_block_is_conv_plus_residual() {
        let mut rng = Rng::new(4, 0);
        let x = rand_map(&mut rng, 2, 5, 5);
        let mut p = GelanBranchParams::zeros(2);
        randomize(&mut p.k3x3, &mut rng, 1.0);
        let mut want = p.k3x3.forward(&x).unwrap().silu();
        want.add_assign(&x);
        let got = gelan_block(&x, &p, GelanMode::Train).unwrap();
        assert!(got.values().max_abs_diff(want.values()) < 1e-15);
    }

    #[test]
    fn train_and_deploy_agree() {
        let mut rng = Rng::new(5, 0);
        for _ in 0..20 {
            let mut p = GelanParams::zeros(6, 3, 3, 2);
            randomize(&mut p, &mut rng, 0.8);
            let hi = rand_map(&mut rng, 3, 4, 6);
            let lo = rand_map(&mut rng, 3, 2, 3);
            let a = gelan_forward(&hi, &lo, &p, GelanMode::Train).unwrap();
            let b = gelan_forward(&hi, &lo, &p, GelanMode::Deploy).unwrap();
            assert_eq!((a.height(), a.width()), (4, 6));
            assert!(a.values().max_abs_diff(b.values()) < 1e-10);
        }
    }

    #[test]
    fn incompatible_sizes_are_shape_errors() {
        let p = GelanParams::zeros(4, 2, 2, 1);
        let hi = FeatureMap::zeros(2, 4, 4);
        let lo = FeatureMap::zeros(2, 3, 2);
        assert!(matches!(gelan_forward(&hi, &lo, &p, GelanMode::Train), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(6, 0);
        let mut p = GelanParams::zeros(4, 3, 2, 2);
        randomize(&mut p, &mut rng, 0.6);
        let hi = rand_map(&mut rng, 2, 4, 4);
        let lo = rand_map(&mut rng, 2, 2, 2);
        let up = rand_map(&mut rng, 2, 4, 4);
        let loss = |p: &GelanParams, hi: &FeatureMap, lo: &FeatureMap| -> f64 {
            let y = gelan_forward(hi, lo, p, GelanMode::Train).unwrap();
            y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = gelan_forward_cached(&hi, &lo, &p, GelanMode::Train).unwrap();
        let mut g = GelanParams::zeros(4, 3, 2, 2);
        let (ghi, glo) = gelan_backward(&p, &cache, &up, &mut g).unwrap();
        let num = finite_difference_slice(
            |v| {
                let mut q = p.clone();
                q.assign_flat(v);
                loss(&q, &hi, &lo)
            },
            &p.flatten(),
            1e-6,
        )
        .unwrap();
        assert!(relative_error(&g.flatten(), &num, 1e-3) < 1e-6);
        let num = finite_difference_slice(
            |v| loss(&p, &FeatureMap::new(2, 4, 4, v.to_vec()).unwrap(), &lo),
            hi.data(),
            1e-6,
        )
        .unwrap();
        assert!(relative_error(ghi.data(), &num, 1e-3) < 1e-6);
        let num = finite_difference_slice(
            |v| loss(&p, &hi, &FeatureMap::new(2, 2, 2, v.to_vec()).unwrap()),
            lo.data(),
            1e-6,
        )
        .unwrap();
        assert!(relative_error(glo.data(), &num, 1e-3) < 1e-6);
    }

    #[test]
    fn deploy_flops_ignore_branch_count() {
        let one = block_flops(22, 8, 8, &BRANCH_SHAPES[..1], GelanMode::Deploy);
        let four = block_flops(22, 8, 8, &BRANCH_SHAPES, GelanMode::Deploy);
        let plain = block_flops(22, 8, 8, &[(3, 3)], GelanMode::Train);
        assert_eq!(one, four);
        assert_eq!(four, plain);
        assert!(block_flops(22, 8, 8, &BRANCH_SHAPES, GelanMode::Train) > four);
    }
}
