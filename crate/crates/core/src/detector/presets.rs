//! Named configurations.
//!
//! `PAPER_SHAPES` lists the published LINEA hyperparameters. The `-toy`
//! presets keep the depth-like knobs (decoder layers, GELAN depth, sampling
//! points, loss weights) and shrink widths, query count and schedule to desk
//! scale.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DetectorConfig, LossWeights, OptimizerConfig};
use crate::error::config_err;
use crate::Result;

/// Published hyperparameters of one model size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaperShape {
    pub name: &'static str,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub gelan_hidden: usize,
    pub gelan_depth: usize,
    pub decoder_layers: usize,
    pub num_queries: usize,
    pub points_per_level: [usize; 3],
    pub base_lr: f64,
    pub backbone_lr: f64,
    pub weight_decay: f64,
    pub w_line: f64,
    pub w_class: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

pub const PAPER_SHAPES: [PaperShape; 4] = [
    PaperShape {
        name: "L",
        embed_dim: 256,
        ffn_dim: 1024,
        gelan_hidden: 64,
        gelan_depth: 3,
        decoder_layers: 6,
        num_queries: 1100,
        points_per_level: [4, 1, 1],
        base_lr: 2.5e-4,
        backbone_lr: 1.25e-5,
        weight_decay: 1.25e-4,
        w_line: 5.0,
        w_class: 4.0,
        batch_size: 8,
        epochs: 12,
    },
    PaperShape {
        name: "M",
        embed_dim: 256,
        ffn_dim: 512,
        gelan_hidden: 42,
        gelan_depth: 3,
        decoder_layers: 4,
        num_queries: 1100,
        points_per_level: [4, 1, 1],
        base_lr: 2e-4,
        backbone_lr: 2e-5,
        weight_decay: 1e-4,
        w_line: 5.0,
        w_class: 1.0,
        batch_size: 8,
        epochs: 24,
    },
    PaperShape {
        name: "S",
        embed_dim: 256,
        ffn_dim: 512,
        gelan_hidden: 42,
        gelan_depth: 2,
        decoder_layers: 3,
        num_queries: 1100,
        points_per_level: [4, 1, 1],
        base_lr: 2e-4,
        backbone_lr: 1e-4,
        weight_decay: 1e-4,
        w_line: 5.0,
        w_class: 1.0,
        batch_size: 8,
        epochs: 36,
    },
    PaperShape {
        name: "N",
        embed_dim: 128,
        ffn_dim: 512,
        gelan_hidden: 22,
        gelan_depth: 2,
        decoder_layers: 3,
        num_queries: 1100,
        points_per_level: [4, 1, 1],
        base_lr: 8e-4,
        backbone_lr: 4e-4,
        weight_decay: 1e-4,
        w_line: 5.0,
        w_class: 1.0,
        batch_size: 8,
        epochs: 72,
    },
];

pub fn paper_shape(name: &str) -> Option<&'static PaperShape> {
    PAPER_SHAPES.iter().find(|s| s.name.eq_ignore_ascii_case(name))
}

pub const PRESET_NAMES: [&str; 4] = ["linea-n-toy", "linea-s-toy", "linea-m-toy", "linea-l-toy"];

/// Toy configuration by name.
pub fn preset(name: &str) -> Result<DetectorConfig> {
    let paper = match name {
        "linea-n-toy" => &PAPER_SHAPES[3],
        "linea-s-toy" => &PAPER_SHAPES[2],
        "linea-m-toy" => &PAPER_SHAPES[1],
        "linea-l-toy" => &PAPER_SHAPES[0],
        _ => {
            return Err(config_err!(
                "unknown preset `{name}` (expected one of {})",
                PRESET_NAMES.join(", ")
            ))
        }
    };
    // Widths shrink by 4x from the published sizes.
    let dim = paper.embed_dim / 4;
    Ok(DetectorConfig {
        preset: String::from(name),
        image_channels: 1,
        stem_channels: 16,
        stem_stride: 1,
        stage_channels: vec![dim, dim, dim],
        dim,
        ffn_dim: paper.ffn_dim / 4,
        gelan_hidden: paper.gelan_hidden.max(16),
        gelan_depth: paper.gelan_depth,
        encoder_heads: 8,
        decoder_layers: paper.decoder_layers,
        decoder_heads: 8,
        dla_heads: 8,
        points_per_level: paper.points_per_level.to_vec(),
        num_queries: 20,
        loss: LossWeights {
            w_line: paper.w_line,
            w_class: paper.w_class,
        },
        optimizer: OptimizerConfig {
            lr: 2e-3,
            backbone_lr: 2e-3,
            weight_decay: paper.weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        },
        batch_size: paper.batch_size,
        epochs: 30,
    })
}

/// Every toy preset, in size order.
pub fn all_presets() -> Vec<DetectorConfig> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("known preset")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_values() {
        let l = paper_shape("L").unwrap();
        assert_eq!((l.embed_dim, l.ffn_dim, l.gelan_hidden, l.gelan_depth, l.decoder_layers), (256, 1024, 64, 3, 6));
        assert_eq!(l.num_queries, 1100);
        assert_eq!(l.points_per_level, [4, 1, 1]);
        assert_eq!((l.w_line, l.w_class), (5.0, 4.0));
        let n = paper_shape("n").unwrap();
        assert_eq!((n.embed_dim, n.gelan_hidden, n.base_lr, n.epochs), (128, 22, 8e-4, 72));
    }

    #[test]
    fn toy_presets_mirror_depth_knobs() {
        let layers: Vec<usize> = all_presets().iter().map(|c| c.decoder_layers).collect();
        assert_eq!(layers, [3, 3, 4, 6]);
        let depth: Vec<usize> = all_presets().iter().map(|c| c.gelan_depth).collect();
        assert_eq!(depth, [2, 2, 3, 3]);
        for c in all_presets() {
            assert_eq!(c.points_per_level, [4, 1, 1]);
            assert_eq!(c.loss.w_line, 5.0);
            c.validate().unwrap();
        }
        assert_eq!(preset("linea-l-toy").unwrap().loss.w_class, 4.0);
        assert!(preset("linea-x").is_err());
    }
}
