//! Decoder layers: query self-attention, deformable line cross-attention
//! against the encoder maps, a feed-forward block, and logit-space anchor
//! refinement.

use alloc::vec;
use alloc::vec::Vec;

use crate::dla::{dla_backward, dla_forward_batch, DlaConfig, DlaParams, DlaTape};
use crate::encoder::{AttentionCache, MultiHeadAttention};
use crate::error::shape_err;
use crate::geometry::{sigmoid, LineSegment};
use crate::numerics::{silu, silu_backward, FeatureMap, LayerNorm, LayerNormCache, Linear, Tensor};
use crate::params::param_set;
use crate::rng::Rng;
use crate::Result;

/// Content vectors and logit-space anchors of `k` queries.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    /// `(k, d)`.
    pub content: Tensor,
    /// `(k, 4)`.
    pub anchors: Tensor,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.anchors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lines(&self) -> Vec<LineSegment> {
        self.anchors.data().chunks(4).map(LineSegment::from_logits).collect()
    }
}

/// Two linear layers with SiLU in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

param_set!(Mlp { fc1, fc2 });

#[derive(Clone, Debug)]
pub struct MlpCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            fc1: Linear::zeros(input, hidden),
            fc2: Linear::zeros(hidden, output),
        }
    }

    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::xavier(input, hidden, rng),
            fc2: Linear::xavier(hidden, output, rng),
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, MlpCache) {
        let pre = self.fc1.forward(x, rows);
        let hidden: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
        let y = self.fc2.forward(&hidden, rows);
        (
            y,
            MlpCache {
                x: x.to_vec(),
                pre,
                hidden,
            },
        )
    }

    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let rows = cache.pre.len() / self.fc1.out_dim();
        let mut dh = self.fc2.backward(&cache.hidden, rows, dy, &mut grad.fc2);
        for (g, &p) in dh.iter_mut().zip(&cache.pre) {
            *g *= silu_backward(p);
        }
        self.fc1.backward(&cache.x, rows, &dh, &mut grad.fc1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross: DlaParams,
    pub norm2: LayerNorm,
    pub ffn: Mlp,
    pub norm3: LayerNorm,
    /// `d -> 1` line-vs-background logit.
    pub cls_head: Linear,
    /// `d -> 4` logit-space endpoint refinement.
    pub delta_head: Mlp,
}

param_set!(DecoderLayerParams {
    self_attn,
    norm1,
    cross,
    norm2,
    ffn,
    norm3,
    cls_head,
    delta_head
});

/// Shape knobs shared by all decoder layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderShape {
    pub dla: DlaConfig,
    pub heads: usize,
    pub ffn_dim: usize,
}

/// Logit bias giving an initial foreground probability of 1%.
pub const CLASS_PRIOR_BIAS: f64 = -4.59511985013459;

impl DecoderLayerParams {
    pub fn zeros(shape: &DecoderShape) -> Self {
        let d = shape.dla.dim;
        Self {
            self_attn: MultiHeadAttention::zeros(d, shape.heads),
            norm1: LayerNorm::zeros(d),
            cross: DlaParams::zeros(&shape.dla, &vec![d; shape.dla.levels()]),
            norm2: LayerNorm::zeros(d),
            ffn: Mlp::zeros(d, shape.ffn_dim, d),
            norm3: LayerNorm::zeros(d),
            cls_head: Linear::zeros(d, 1),
            delta_head: Mlp::zeros(d, d, 4),
        }
    }

    /// Training initialization: the refinement head starts at zero so the
    /// first pass keeps the selected anchors.
    pub fn init(shape: &DecoderShape, rng: &mut Rng) -> Self {
        let d = shape.dla.dim;
        let mut cls_head = Linear::xavier(d, 1, rng);
        cls_head.bias.data_mut()[0] = CLASS_PRIOR_BIAS;
        let mut delta_head = Mlp::init(d, d, 4, rng);
        delta_head.fc2 = Linear::zeros(d, 4);
        Self {
            self_attn: MultiHeadAttention::init(d, shape.heads, rng),
            norm1: LayerNorm::new(d),
            cross: DlaParams::init(&shape.dla, &vec![d; shape.dla.levels()], rng),
            norm2: LayerNorm::new(d),
            ffn: Mlp::init(d, shape.ffn_dim, d, rng),
            norm3: LayerNorm::new(d),
            cls_head,
            delta_head,
        }
    }
}

/// Intermediates for [`decoder_layer_backward`].
#[derive(Clone, Debug)]
pub struct LayerCache {
    k: usize,
    boxes: Vec<f64>,
    pos: MlpCache,
    attn: AttentionCache,
    norm1: LayerNormCache,
    tape: DlaTape,
    norm2: LayerNormCache,
    ffn: MlpCache,
    norm3: LayerNormCache,
    out: Vec<f64>,
    delta: MlpCache,
}

/// Output of one decoder layer.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub queries: QuerySet,
    /// `(k,)` class logits of the refined queries.
    pub logits: Vec<f64>,
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn add_into(acc: &mut [f64], b: &[f64]) {
    acc.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Runs one layer and saves what [`decoder_layer_backward`] needs.
pub fn decoder_layer_cached(
    params: &DecoderLayerParams,
    pos_mlp: &Mlp,
    shape: &DecoderShape,
    queries: &QuerySet,
    features: &[FeatureMap],
) -> Result<(LayerOutput, LayerCache)> {
    let d = shape.dla.dim;
    let k = queries.len();
    if queries.content.shape() != [k, d] {
        return Err(shape_err!("content must be ({k}, {d}), got {:?}", queries.content.shape()));
    }
    let x = queries.content.data();
    let boxes: Vec<f64> = queries.anchors.data().iter().map(|&a| sigmoid(a)).collect();
    let (pos, pos_cache) = pos_mlp.forward(&boxes, k);

    let q_in = add(x, &pos);
    let (sa, attn) = params.self_attn.forward(&q_in, x, k)?;
    let (h1, norm1) = params.norm1.forward(&add(x, &sa), k);

    let mut tape = DlaTape::default();
    let lines = queries.lines();
    let c = dla_forward_batch(&shape.dla, &params.cross, features, &add(&h1, &pos), &lines, &mut tape)?;
    let (h2, norm2) = params.norm2.forward(&add(&h1, &c), k);

    let (f, ffn) = params.ffn.forward(&h2, k);
    let (out, norm3) = params.norm3.forward(&add(&h2, &f), k);

    let logits = params.cls_head.forward(&out, k);
    let (delta, delta_cache) = params.delta_head.forward(&out, k);
    let anchors = add(queries.anchors.data(), &delta);

    Ok((
        LayerOutput {
            queries: QuerySet {
                content: Tensor::new(vec![k, d], out.clone())?,
                anchors: Tensor::new(vec![k, 4], anchors)?,
            },
            logits,
        },
        LayerCache {
            k,
            boxes,
            pos: pos_cache,
            attn,
            norm1,
            tape,
            norm2,
            ffn,
            norm3,
            out,
            delta: delta_cache,
        },
    ))
}

/// `decoder_layer` without saving intermediates.
pub fn decoder_layer(
    params: &DecoderLayerParams,
    pos_mlp: &Mlp,
    shape: &DecoderShape,
    queries: &QuerySet,
    features: &[FeatureMap],
) -> Result<LayerOutput> {
    Ok(decoder_layer_cached(params, pos_mlp, shape, queries, features)?.0)
}

/// Gradients of one layer's inputs.
#[derive(Clone, Debug)]
pub struct LayerInputGrads {
    /// `(k, d)`.
    pub content: Vec<f64>,
    /// `(k, 4)` logit-space anchors.
    pub anchors: Vec<f64>,
    pub features: Vec<FeatureMap>,
}

/// Backward of [`decoder_layer_cached`] given the gradients of the output
/// content, logits and refined anchors.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer_backward(
    params: &DecoderLayerParams,
    pos_mlp: &Mlp,
    shape: &DecoderShape,
    features: &[FeatureMap],
    cache: &LayerCache,
    g_content: &[f64],
    g_logits: &[f64],
    g_anchors: &[f64],
    grad: &mut DecoderLayerParams,
    pos_grad: &mut Mlp,
) -> Result<LayerInputGrads> {
    let k = cache.k;
    let mut g_out = g_content.to_vec();
    add_into(&mut g_out, &params.delta_head.backward(&cache.delta, g_anchors, &mut grad.delta_head));
    add_into(&mut g_out, &params.cls_head.backward(&cache.out, k, g_logits, &mut grad.cls_head));

    let g_s3 = params.norm3.backward(&cache.norm3, &g_out, &mut grad.norm3);
    let mut g_h2 = params.ffn.backward(&cache.ffn, &g_s3, &mut grad.ffn);
    add_into(&mut g_h2, &g_s3);

    let g_s2 = params.norm2.backward(&cache.norm2, &g_h2, &mut grad.norm2);
    let dla = dla_backward(&shape.dla, &params.cross, features, &cache.tape, &g_s2, &mut grad.cross)?;
    let mut g_h1 = add(&g_s2, &dla.queries);
    let mut g_pos = dla.queries;

    let g_s1 = params.norm1.backward(&cache.norm1, &g_h1, &mut grad.norm1);
    let (d_qk, d_v) = params.self_attn.backward(&cache.attn, &g_s1, &mut grad.self_attn);
    g_h1 = g_s1;
    add_into(&mut g_h1, &d_qk);
    add_into(&mut g_h1, &d_v);
    add_into(&mut g_pos, &d_qk);
    // Readout boxes feed both the positional embedding and the DLA lines.
    let mut g_boxes = pos_mlp.backward(&cache.pos, &g_pos, pos_grad);
    for q in 0..k {
        g_boxes[q * 4] += dla.ep1[q][0];
        g_boxes[q * 4 + 1] += dla.ep1[q][1];
        g_boxes[q * 4 + 2] += dla.ep2[q][0];
        g_boxes[q * 4 + 3] += dla.ep2[q][1];
    }
    let anchors = g_anchors
        .iter()
        .zip(&g_boxes)
        .zip(&cache.boxes)
        .map(|((ga, gb), s)| ga + gb * s * (1.0 - s))
        .collect();

    Ok(LayerInputGrads {
        content: g_h1,
        anchors,
        features: dla.features,
    })
}
