//! Desk-scale end-to-end line detector.
//!
//! A strided convolutional backbone feeds the hybrid encoder. Every encoder
//! pixel gets an instance logit; the top `k` pixels become anchors (their
//! center plus predicted endpoint offsets, in logit space), paired with
//! learnable content embeddings. Decoder layers refine content with
//! self-attention, deformable line cross-attention and a feed-forward block,
//! and move anchors by predicted logit-space deltas. Predictions of the
//! proposal stage and of every decoder layer are matched one-to-one to the
//! ground truth and supervised.

mod backbone;
mod decoder;
mod loss;
mod matching;
mod model;
mod optim;
mod presets;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use backbone::{backbone_backward, backbone_forward, BackboneCache, BackboneParams, BackboneStage};
pub use decoder::{
    decoder_layer, decoder_layer_backward, decoder_layer_cached, DecoderLayerParams, DecoderShape, LayerCache,
    LayerInputGrads, LayerOutput, Mlp, QuerySet, CLASS_PRIOR_BIAS,
};
pub use loss::{compute_loss, focal_loss, line_l1, LossTerms, LossWeights, FOCAL_ALPHA, FOCAL_GAMMA};
pub use matching::{assignment_cost, bipartite_match, hungarian, line_cost, match_cost, Assignment};
pub use model::{
    batch_gradient, detector_gradcheck, forward, image_gradient, image_loss, predict, run_backbone, run_decoder,
    run_encoder, select_queries, single_gradient, reduce_gradients, gradcheck_config, DetectorParams, ForwardPass,
    ImageLoss, StagePredictions,
};
pub use optim::{clip_grad_norm, AdamW, OptimizerConfig};
pub use presets::{all_presets, paper_shape, preset, PaperShape, PAPER_SHAPES, PRESET_NAMES};

pub use crate::evaluation::Prediction;

use crate::dla::DlaConfig;
use crate::error::config_err;
use crate::Result;

/// Every knob of a detector and its training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub preset: String,
    pub image_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    /// One stride-2 stage per feature level, finest first.
    pub stage_channels: Vec<usize>,
    pub dim: usize,
    pub ffn_dim: usize,
    pub gelan_hidden: usize,
    pub gelan_depth: usize,
    pub encoder_heads: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub dla_heads: usize,
    pub points_per_level: Vec<usize>,
    pub num_queries: usize,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(config_err!("at least one backbone stage is required"));
        }
        if self.points_per_level.len() != self.stage_channels.len() {
            return Err(config_err!(
                "{} sampling point counts for {} feature levels",
                self.points_per_level.len(),
                self.stage_channels.len()
            ));
        }
        for (what, heads) in [
            ("encoder", self.encoder_heads),
            ("decoder", self.decoder_heads),
            ("DLA", self.dla_heads),
        ] {
            if heads == 0 || self.dim % heads != 0 {
                return Err(config_err!("{what} heads {heads} do not divide width {}", self.dim));
            }
        }
        if self.num_queries == 0 || self.decoder_layers == 0 || self.batch_size == 0 {
            return Err(config_err!("queries, decoder layers and batch size must be positive"));
        }
        if !(self.stem_stride == 1 || self.stem_stride == 2) {
            return Err(config_err!("stem stride must be 1 or 2"));
        }
        if self.loss.w_line < 0.0 || self.loss.w_class < 0.0 {
            return Err(config_err!("loss weights must be non-negative"));
        }
        self.dla_config().map(|_| ())
    }

    pub fn dla_config(&self) -> Result<DlaConfig> {
        DlaConfig::new(self.dla_heads, self.points_per_level.clone(), self.dim)
    }

    pub fn decoder_shape(&self) -> Result<DecoderShape> {
        Ok(DecoderShape {
            dla: self.dla_config()?,
            heads: self.decoder_heads,
            ffn_dim: self.ffn_dim,
        })
    }

    pub fn encoder_shape(&self) -> crate::encoder::EncoderShape {
        crate::encoder::EncoderShape {
            dim: self.dim,
            heads: self.encoder_heads,
            hidden: self.gelan_hidden,
            depth: self.gelan_depth,
        }
    }

    /// Encoder pixel count for an `h x w` input.
    pub fn pixel_count(&self, h: usize, w: usize) -> usize {
        let (mut h, mut w) = (h.div_ceil(self.stem_stride), w.div_ceil(self.stem_stride));
        let mut total = 0;
        for _ in &self.stage_channels {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
            total += h * w;
        }
        total
    }
}
