//! Standard scaled dot-product multi-head attention.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, shape_err};
use crate::numerics::{softmax_backward_in_place, softmax_in_place, FeatureMap, Linear};
use crate::params::param_set;
use crate::rng::Rng;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

param_set!(MultiHeadAttention { query, key, value, out });

/// Intermediates of one attention pass.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    n: usize,
    qk_in: Vec<f64>,
    v_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `(heads, n, n)` row-softmaxed scores.
    probs: Vec<f64>,
    concat: Vec<f64>,
}

impl MultiHeadAttention {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            query: Linear::zeros(dim, dim),
            key: Linear::zeros(dim, dim),
            value: Linear::zeros(dim, dim),
            out: Linear::zeros(dim, dim),
        }
    }

    pub fn init(dim: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            heads,
            query: Linear::xavier(dim, dim, rng),
            key: Linear::xavier(dim, dim, rng),
            value: Linear::xavier(dim, dim, rng),
            out: Linear::xavier(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.in_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(config_err!(
                "attention width {d} is not divisible by {} heads",
                self.heads
            ));
        }
        Ok(())
    }

    /// Self-attention over `n` tokens: queries and keys from `qk_in`, values
    /// from `v_in` (both `(n, d)`).
    pub fn forward(&self, qk_in: &[f64], v_in: &[f64], n: usize) -> Result<(Vec<f64>, AttentionCache)> {
        self.validate()?;
        let d = self.dim();
        if qk_in.len() != n * d || v_in.len() != n * d {
            return Err(shape_err!("attention inputs must be ({n}, {d})"));
        }
        let dh = d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let q = self.query.forward(qk_in, n);
        let k = self.key.forward(qk_in, n);
        let v = self.value.forward(v_in, n);
        let mut probs = vec![0.0; self.heads * n * n];
        let mut concat = vec![0.0; n * d];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..n {
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * d + off..i * d + off + dh];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + dh];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(row);
                let out = &mut concat[i * d + off..i * d + off + dh];
                for (j, p) in row.iter().enumerate() {
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (o, vv) in out.iter_mut().zip(vj) {
                        *o += p * vv;
                    }
                }
            }
        }
        let y = self.out.forward(&concat, n);
        Ok((
            y,
            AttentionCache {
                n,
                qk_in: qk_in.to_vec(),
                v_in: v_in.to_vec(),
                q,
                k,
                v,
                probs,
                concat,
            },
        ))
    }

    /// Returns `(dL/d qk_in, dL/d v_in)` and accumulates into `grad`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &[f64],
        grad: &mut MultiHeadAttention,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = cache.n;
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let dconcat = self.out.backward(&cache.concat, n, dy, &mut grad.out);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..n {
                let p = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let go = &dconcat[i * d + off..i * d + off + dh];
                for j in 0..n {
                    let vj = &cache.v[j * d + off..j * d + off + dh];
                    dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for (t, g) in dvj.iter_mut().zip(go) {
                        *t += p[j] * g;
                    }
                }
                softmax_backward_in_place(p, &mut dp);
                for j in 0..n {
                    let ds = dp[j] * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * cache.k[j * d + off + c];
                        dk[j * d + off + c] += ds * cache.q[i * d + off + c];
                    }
                }
            }
        }
        let mut d_qk = self.query.backward(&cache.qk_in, n, &dq, &mut grad.query);
        let d_qk2 = self.key.backward(&cache.qk_in, n, &dk, &mut grad.key);
        for (a, b) in d_qk.iter_mut().zip(d_qk2) {
            *a += b;
        }
        let d_v = self.value.backward(&cache.v_in, n, &dv, &mut grad.value);
        (d_qk, d_v)
    }
}

/// Self-attention with a residual over the pixels of the (coarsest) map:
/// `map + attention(tokens)`, reshaped back to `(d, H, W)`.
pub fn self_attention_smallest(map: &FeatureMap, params: &MultiHeadAttention) -> Result<FeatureMap> {
    Ok(self_attention_map(map, params)?.0)
}

pub(crate) fn self_attention_map(
    map: &FeatureMap,
    params: &MultiHeadAttention,
) -> Result<(FeatureMap, AttentionCache)> {
    params.validate()?;
    if map.channels() != params.dim() {
        return Err(shape_err!(
            "attention width {} does not match {} channels",
            params.dim(),
            map.channels()
        ));
    }
    let tokens = map.to_tokens();
    let n = map.plane_len();
    let (mut y, cache) = params.forward(&tokens, &tokens, n)?;
    for (a, b) in y.iter_mut().zip(&tokens) {
        *a += b;
    }
    Ok((
        FeatureMap::from_tokens(map.channels(), map.height(), map.width(), &y),
        cache,
    ))
}

pub(crate) fn self_attention_map_backward(
    map: &FeatureMap,
    params: &MultiHeadAttention,
    cache: &AttentionCache,
    grad_out: &FeatureMap,
    grad: &mut MultiHeadAttention,
) -> FeatureMap {
    let g = grad_out.to_tokens();
    let (a, b) = params.backward(cache, &g, grad);
    let total: Vec<f64> = g.iter().zip(a).zip(b).map(|((x, y), z)| x + y + z).collect();
    FeatureMap::from_tokens(map.channels(), map.height(), map.width(), &total)
}
