//! Full detector: parameters, forward pass, per-image loss and gradient.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::backbone::{backbone_backward, backbone_forward, BackboneCache, BackboneParams};
use super::decoder::{decoder_layer_backward, decoder_layer_cached, DecoderLayerParams, LayerCache, Mlp, QuerySet};
use super::loss::{compute_loss, LossTerms};
use super::matching::bipartite_match;
use super::{DetectorConfig, CLASS_PRIOR_BIAS};
use crate::data::DatasetRecord;
use crate::encoder::{encoder_backward, encoder_forward, EncoderCache, EncoderParams, GelanMode};
use crate::error::config_err;
use crate::evaluation::Prediction;
use crate::geometry::{generate_anchors, sigmoid, AnchorSet, LineSegment};
use crate::numerics::{finite_difference_slice, FeatureMap, Linear, Tensor};
use crate::params::{param_set, ParamSet};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorParams {
    pub backbone: BackboneParams,
    pub encoder: EncoderParams,
    /// `d -> 1` instance logit of every encoder pixel.
    pub prob_head: Linear,
    /// `d -> 4` logit-space endpoint offsets of selected pixels.
    pub offset_head: Linear,
    /// `(k, d)` learnable content queries.
    pub query_embed: Tensor,
    /// Positional embedding of the normalized anchor endpoints.
    pub pos_mlp: Mlp,
    pub layers: Vec<DecoderLayerParams>,
}

param_set!(DetectorParams {
    backbone,
    encoder,
    prob_head,
    offset_head,
    query_embed,
    pos_mlp,
    layers
});

impl DetectorParams {
    pub fn zeros(cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let shape = cfg.decoder_shape()?;
        Ok(Self {
            backbone: BackboneParams::zeros(cfg.image_channels, cfg.stem_channels, cfg.stem_stride, &cfg.stage_channels),
            encoder: EncoderParams::zeros(&cfg.stage_channels, cfg.encoder_shape()),
            prob_head: Linear::zeros(d, 1),
            offset_head: Linear::zeros(d, 4),
            query_embed: Tensor::zeros(&[cfg.num_queries, d]),
            pos_mlp: Mlp::zeros(4, d, d),
            layers: (0..cfg.decoder_layers).map(|_| DecoderLayerParams::zeros(&shape)).collect(),
        })
    }

    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &DetectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed, u64::MAX);
        let d = cfg.dim;
        let shape = cfg.decoder_shape()?;
        let backbone = BackboneParams::init(
            cfg.image_channels,
            cfg.stem_channels,
            cfg.stem_stride,
            &cfg.stage_channels,
            &mut rng,
        );
        let encoder = EncoderParams::init(&cfg.stage_channels, cfg.encoder_shape(), &mut rng);
        let mut prob_head = Linear::xavier(d, 1, &mut rng);
        prob_head.bias.data_mut()[0] = CLASS_PRIOR_BIAS;
        let mut offset_head = Linear::xavier(d, 4, &mut rng);
        offset_head.weight.scale(0.1);
        offset_head.bias.data_mut().copy_from_slice(&[-0.5, 0.0, 0.5, 0.0]);
        let query_embed = Tensor::from_fn(&[cfg.num_queries, d], |_| rng.normal());
        let pos_mlp = Mlp::init(4, d, d, &mut rng);
        let layers = (0..cfg.decoder_layers)
            .map(|_| DecoderLayerParams::init(&shape, &mut rng))
            .collect();
        Ok(Self {
            backbone,
            encoder,
            prob_head,
            offset_head,
            query_embed,
            pos_mlp,
            layers,
        })
    }
}

/// Logits and logit-space anchors of one supervised stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePredictions {
    pub logits: Vec<f64>,
    /// `(k, 4)` flat.
    pub anchors: Vec<f64>,
}

impl StagePredictions {
    pub fn lines(&self) -> Vec<LineSegment> {
        self.anchors.chunks(4).map(LineSegment::from_logits).collect()
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        self.lines()
            .into_iter()
            .zip(&self.logits)
            .map(|(line, &l)| Prediction { line, score: sigmoid(l) })
            .collect()
    }
}

/// Predictions of the proposal stage and of every decoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub proposals: StagePredictions,
    pub layers: Vec<StagePredictions>,
}

impl ForwardPass {
    /// Proposal stage first, then each decoder layer.
    pub fn stages(&self) -> impl Iterator<Item = &StagePredictions> {
        core::iter::once(&self.proposals).chain(&self.layers)
    }

    pub fn final_predictions(&self) -> Vec<Prediction> {
        self.layers.last().unwrap_or(&self.proposals).predictions()
    }
}

struct Caches {
    backbone: BackboneCache,
    encoder: EncoderCache,
    enc_maps: Vec<FeatureMap>,
    tokens: Vec<f64>,
    selected: Vec<usize>,
    selected_tokens: Vec<f64>,
    layers: Vec<LayerCache>,
}

pub fn run_backbone(params: &DetectorParams, image: &FeatureMap) -> Result<Vec<FeatureMap>> {
    Ok(backbone_forward(&params.backbone, image)?.0)
}

pub fn run_encoder(params: &DetectorParams, maps: &[FeatureMap], mode: GelanMode) -> Result<Vec<FeatureMap>> {
    Ok(encoder_forward(&params.encoder, maps, mode)?.0)
}

fn concat_tokens(maps: &[FeatureMap]) -> (Vec<f64>, Vec<(usize, usize)>) {
    let mut tokens = Vec::new();
    for m in maps {
        tokens.extend(m.to_tokens());
    }
    (tokens, maps.iter().map(|m| (m.height(), m.width())).collect())
}

/// Top-`k` pixel selection: anchors from [`generate_anchors`], content from
/// the first `k` rows of the learnable query table.
pub fn select_queries(params: &DetectorParams, encoder_maps: &[FeatureMap], k: usize) -> Result<(QuerySet, AnchorSet)> {
    let d = params.query_embed.shape()[1];
    if k > params.query_embed.shape()[0] {
        return Err(config_err!(
            "k = {k} exceeds the {} learnable content queries",
            params.query_embed.shape()[0]
        ));
    }
    let (tokens, shapes) = concat_tokens(encoder_maps);
    let n = tokens.len() / d;
    let feats = Tensor::new(vec![n, d], tokens)?;
    let anchors = generate_anchors(&feats, k, &shapes, &params.prob_head, &params.offset_head)?;
    let content = Tensor::new(vec![k, d], params.query_embed.data()[..k * d].to_vec())?;
    Ok((
        QuerySet {
            content,
            anchors: anchors.anchors.clone(),
        },
        anchors,
    ))
}

fn run(
    cfg: &DetectorConfig,
    params: &DetectorParams,
    image: &FeatureMap,
    mode: GelanMode,
    keep: bool,
) -> Result<(ForwardPass, Option<Caches>)> {
    let (maps, bb_cache) = backbone_forward(&params.backbone, image)?;
    let (enc_maps, enc_cache) = encoder_forward(&params.encoder, &maps, mode)?;
    let (mut queries, anchor_set) = select_queries(params, &enc_maps, cfg.num_queries)?;
    let proposals = StagePredictions {
        logits: anchor_set.proposals.clone(),
        anchors: anchor_set.anchors.data().to_vec(),
    };
    let shape = cfg.decoder_shape()?;
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut layer_caches = Vec::new();
    for lp in &params.layers {
        let (out, cache) = decoder_layer_cached(lp, &params.pos_mlp, &shape, &queries, &enc_maps)?;
        layers.push(StagePredictions {
            logits: out.logits,
            anchors: out.queries.anchors.data().to_vec(),
        });
        queries = out.queries;
        if keep {
            layer_caches.push(cache);
        }
    }
    let pass = ForwardPass { proposals, layers };
    if !keep {
        return Ok((pass, None));
    }
    let d = cfg.dim;
    let (tokens, _) = concat_tokens(&enc_maps);
    let mut selected_tokens = Vec::with_capacity(anchor_set.len() * d);
    for &i in &anchor_set.source_indices {
        selected_tokens.extend_from_slice(&tokens[i * d..(i + 1) * d]);
    }
    Ok((
        pass,
        Some(Caches {
            backbone: bb_cache,
            encoder: enc_cache,
            enc_maps,
            tokens,
            selected: anchor_set.source_indices,
            selected_tokens,
            layers: layer_caches,
        }),
    ))
}

/// Predictions of every stage for one image.
pub fn forward(cfg: &DetectorConfig, params: &DetectorParams, image: &FeatureMap, mode: GelanMode) -> Result<ForwardPass> {
    Ok(run(cfg, params, image, mode, false)?.0)
}

/// Query selection and decoder on given encoder maps.
pub fn run_decoder(cfg: &DetectorConfig, params: &DetectorParams, enc_maps: &[FeatureMap]) -> Result<ForwardPass> {
    let (mut queries, anchor_set) = select_queries(params, enc_maps, cfg.num_queries)?;
    let shape = cfg.decoder_shape()?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let out = super::decoder::decoder_layer(lp, &params.pos_mlp, &shape, &queries, enc_maps)?;
        layers.push(StagePredictions {
            logits: out.logits,
            anchors: out.queries.anchors.data().to_vec(),
        });
        queries = out.queries;
    }
    Ok(ForwardPass {
        proposals: StagePredictions {
            logits: anchor_set.proposals,
            anchors: anchor_set.anchors.into_data(),
        },
        layers,
    })
}

/// Final-layer predictions with deploy-mode (fused) encoder blocks.
pub fn predict(cfg: &DetectorConfig, params: &DetectorParams, image: &FeatureMap) -> Result<Vec<Prediction>> {
    Ok(forward(cfg, params, image, GelanMode::Deploy)?.final_predictions())
}

/// Loss terms of every supervised stage, proposal stage first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageLoss {
    pub stages: Vec<LossTerms>,
}

impl ImageLoss {
    pub fn total(&self) -> f64 {
        self.stages.iter().map(LossTerms::total).sum()
    }

    /// Loss of the last decoder layer alone.
    pub fn last(&self) -> f64 {
        self.stages.last().map_or(0.0, LossTerms::total)
    }

    pub fn accumulate(&mut self, other: &ImageLoss, scale: f64) {
        if self.stages.is_empty() {
            self.stages = vec![LossTerms::default(); other.stages.len()];
        }
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            a.line += scale * b.line;
            a.class += scale * b.class;
        }
    }
}

struct StageGrad {
    logits: Vec<f64>,
    anchors: Vec<f64>,
}

fn stage_loss(cfg: &DetectorConfig, stage: &StagePredictions, truths: &[LineSegment]) -> (LossTerms, StageGrad) {
    let preds = stage.predictions();
    let lines: Vec<LineSegment> = preds.iter().map(|p| p.line).collect();
    let assignment = bipartite_match(&preds, truths, &cfg.loss);
    let (terms, g_logits, g_lines) = compute_loss(&stage.logits, &lines, truths, &assignment, &cfg.loss);
    let anchors = stage
        .anchors
        .iter()
        .zip(g_lines.iter().flatten())
        .map(|(&a, &g)| {
            let s = sigmoid(a);
            g * s * (1.0 - s)
        })
        .collect();
    (
        terms,
        StageGrad {
            logits: g_logits,
            anchors,
        },
    )
}

/// Deeply supervised loss of one image.
pub fn image_loss(cfg: &DetectorConfig, params: &DetectorParams, image: &FeatureMap, truths: &[LineSegment]) -> Result<ImageLoss> {
    let pass = forward(cfg, params, image, GelanMode::Train)?;
    Ok(ImageLoss {
        stages: pass.stages().map(|s| stage_loss(cfg, s, truths).0).collect(),
    })
}

/// Loss of one image; parameter gradients are accumulated into `grad`.
pub fn image_gradient(
    cfg: &DetectorConfig,
    params: &DetectorParams,
    image: &FeatureMap,
    truths: &[LineSegment],
    grad: &mut DetectorParams,
) -> Result<ImageLoss> {
    let (pass, caches) = run(cfg, params, image, GelanMode::Train, true)?;
    let c = caches.expect("caches requested");
    let (terms, grads): (Vec<LossTerms>, Vec<StageGrad>) = pass.stages().map(|s| stage_loss(cfg, s, truths)).unzip();
    let loss = ImageLoss { stages: terms };
    if !loss.total().is_finite() {
        return Err(Error::NonFinite(format!("image loss {:?}", loss.stages)));
    }

    let d = cfg.dim;
    let k = cfg.num_queries;
    let shape = cfg.decoder_shape()?;
    let mut g_maps: Vec<FeatureMap> = c.enc_maps.iter().map(FeatureMap::zeros_like).collect();
    let mut g_content = vec![0.0; k * d];
    let mut g_anchor_carry = vec![0.0; k * 4];
    for l in (0..params.layers.len()).rev() {
        let g = &grads[l + 1];
        let g_anchors: Vec<f64> = g.anchors.iter().zip(&g_anchor_carry).map(|(a, b)| a + b).collect();
        let inp = decoder_layer_backward(
            &params.layers[l],
            &params.pos_mlp,
            &shape,
            &c.enc_maps,
            &c.layers[l],
            &g_content,
            &g.logits,
            &g_anchors,
            &mut grad.layers[l],
            &mut grad.pos_mlp,
        )?;
        for (acc, f) in g_maps.iter_mut().zip(&inp.features) {
            acc.add_assign(f);
        }
        g_content = inp.content;
        g_anchor_carry = inp.anchors;
    }
    for (acc, g) in grad.query_embed.data_mut().iter_mut().zip(&g_content) {
        *acc += g;
    }

    let n = c.tokens.len() / d;
    let g_prop = &grads[0];
    let g_offsets: Vec<f64> = g_prop.anchors.iter().zip(&g_anchor_carry).map(|(a, b)| a + b).collect();
    let g_sel = params
        .offset_head
        .backward(&c.selected_tokens, k, &g_offsets, &mut grad.offset_head);
    let mut g_all_logits = vec![0.0; n];
    for (i, &idx) in c.selected.iter().enumerate() {
        g_all_logits[idx] = g_prop.logits[i];
    }
    let mut g_tokens = params.prob_head.backward(&c.tokens, n, &g_all_logits, &mut grad.prob_head);
    for (i, &idx) in c.selected.iter().enumerate() {
        for j in 0..d {
            g_tokens[idx * d + j] += g_sel[i * d + j];
        }
    }
    let mut off = 0;
    for gm in g_maps.iter_mut() {
        let len = gm.plane_len() * d;
        let from = FeatureMap::from_tokens(d, gm.height(), gm.width(), &g_tokens[off..off + len]);
        gm.add_assign(&from);
        off += len;
    }

    let g_levels = encoder_backward(&params.encoder, &c.encoder, &g_maps, &mut grad.encoder)?;
    backbone_backward(&params.backbone, &c.backbone, &g_levels, &mut grad.backbone)?;
    Ok(loss)
}

/// Mean loss and flat mean gradient over a batch. Per-image gradients are
/// computed independently and summed in batch order, so the result does not
/// depend on how the images are scheduled.
pub fn batch_gradient(
    cfg: &DetectorConfig,
    params: &DetectorParams,
    batch: &[DatasetRecord],
) -> Result<(ImageLoss, Vec<f64>)> {
    let per_image: Vec<(ImageLoss, Vec<f64>)> = batch
        .iter()
        .map(|r| single_gradient(cfg, params, r))
        .collect::<Result<_>>()?;
    Ok(reduce_gradients(&per_image))
}

/// Loss and flat gradient of one record, errors tagged with the record id.
pub fn single_gradient(cfg: &DetectorConfig, params: &DetectorParams, record: &DatasetRecord) -> Result<(ImageLoss, Vec<f64>)> {
    let mut g = params.clone();
    g.zero();
    let loss = image_gradient(cfg, params, &record.image, &record.lines, &mut g).map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("record {}: {m}", record.id)),
        other => other,
    })?;
    Ok((loss, g.flatten()))
}

/// Mean of per-image results, summed in order.
pub fn reduce_gradients(per_image: &[(ImageLoss, Vec<f64>)]) -> (ImageLoss, Vec<f64>) {
    let scale = 1.0 / per_image.len().max(1) as f64;
    let mut loss = ImageLoss::default();
    let mut grad = vec![0.0; per_image.first().map_or(0, |p| p.1.len())];
    for (l, g) in per_image {
        loss.accumulate(l, scale);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss, grad)
}

/// Tiny configuration used by the detector gradient check.
pub fn gradcheck_config() -> DetectorConfig {
    let mut cfg = super::preset("linea-n-toy").expect("known preset");
    cfg.preset = String::from("gradcheck");
    cfg.stem_channels = 3;
    cfg.stem_stride = 2;
    cfg.stage_channels = vec![4, 4, 4];
    cfg.dim = 8;
    cfg.ffn_dim = 8;
    cfg.gelan_hidden = 4;
    cfg.gelan_depth = 1;
    cfg.encoder_heads = 2;
    cfg.decoder_heads = 2;
    cfg.dla_heads = 2;
    cfg.decoder_layers = 2;
    cfg.points_per_level = vec![2, 1, 1];
    cfg.num_queries = 5;
    cfg
}

/// Central-difference check of the full detector loss. Returns the largest
/// relative error per top-level parameter group, over up to `per_group`
/// randomly chosen coordinates of each group.
pub fn detector_gradcheck(seed: u64, per_group: usize) -> Result<Vec<(String, f64)>> {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-3;
    let cfg = gradcheck_config();
    let mut params = DetectorParams::init(&cfg, seed)?;
    let mut rng = Rng::new(seed, 7);
    // Move away from the zero-initialized refinement heads so every path
    // carries signal.
    for l in &mut params.layers {
        for t in l.delta_head.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.range(-0.2, 0.2));
        }
    }
    let record = crate::data::gen_record(seed as usize, (16, 16), 3, seed)?;
    let mut grad = params.clone();
    grad.zero();
    image_gradient(&cfg, &params, &record.image, &record.lines, &mut grad)?;
    let analytic = grad.flatten();
    let flat = params.flatten();

    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut off = 0;
    for (name, t) in params.named_tensors() {
        let group = match name.split('.').next() {
            Some("layers") => name.split('.').take(2).collect::<Vec<_>>().join("."),
            Some(g) => String::from(g),
            None => name.clone(),
        };
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, idx)) => idx.extend(off..off + t.len()),
            None => groups.push((group, (off..off + t.len()).collect())),
        }
        off += t.len();
    }
    let loss_at = |v: &[f64]| -> f64 {
        let mut p = params.clone();
        p.assign_flat(v);
        image_loss(&cfg, &p, &record.image, &record.lines).map_or(f64::NAN, |l| l.total())
    };
    let mut out = Vec::new();
    for (name, mut idx) in groups {
        rng.shuffle(&mut idx);
        idx.truncate(per_group);
        let mut worst: f64 = 0.0;
        for i in idx {
            let num = finite_difference_slice(
                |x| {
                    let mut v = flat.clone();
                    v[i] = x[0];
                    loss_at(&v)
                },
                &[flat[i]],
                H,
            )?;
            let a = analytic[i];
            let err = (a - num[0]).abs() / a.abs().max(num[0].abs()).max(FLOOR);
            worst = worst.max(err);
        }
        out.push((name, worst));
    }
    Ok(out)
}
