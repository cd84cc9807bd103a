//! Set-prediction loss: order-minimized L1 on matched endpoints plus sigmoid
//! focal loss on line-vs-background logits.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{sigmoid, LineSegment};

use super::matching::{l1_distance, Assignment};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_line: f64,
    pub w_class: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

/// Focal loss of one logit and its derivative.
pub fn focal_loss(logit: f64, positive: bool) -> (f64, f64) {
    let p = sigmoid(logit);
    if positive {
        let q = 1.0 - p;
        let qg = q * q;
        let sp = softplus(-logit);
        let loss = FOCAL_ALPHA * qg * sp;
        let grad = -FOCAL_ALPHA * qg * (FOCAL_GAMMA * p * sp + q);
        (loss, grad)
    } else {
        let pg = p * p;
        let sp = softplus(logit);
        let loss = (1.0 - FOCAL_ALPHA) * pg * sp;
        let grad = (1.0 - FOCAL_ALPHA) * pg * (FOCAL_GAMMA * (1.0 - p) * sp + p);
        (loss, grad)
    }
}

/// L1 over endpoint coordinates, minimized over the endpoint order of
/// `truth`, and its gradient with respect to `pred`.
pub fn line_l1(pred: &LineSegment, truth: &LineSegment) -> (f64, [f64; 4]) {
    let direct = l1_distance(pred, truth);
    let swapped = l1_distance(pred, &truth.swapped());
    let t = if swapped < direct { truth.swapped() } else { *truth };
    let (p, t) = (pred.to_array(), t.to_array());
    let mut g = [0.0; 4];
    for i in 0..4 {
        g[i] = if p[i] > t[i] {
            1.0
        } else if p[i] < t[i] {
            -1.0
        } else {
            0.0
        };
    }
    (direct.min(swapped), g)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Weighted regression term.
    pub line: f64,
    /// Weighted classification term.
    pub class: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.line + self.class
    }
}

/// Loss of one image's predictions and gradients with respect to the logits
/// and the normalized endpoint coordinates.
pub fn compute_loss(
    logits: &[f64],
    lines: &[LineSegment],
    truths: &[LineSegment],
    assignment: &Assignment,
    weights: &LossWeights,
) -> (LossTerms, Vec<f64>, Vec<[f64; 4]>) {
    let k = logits.len();
    let mut terms = LossTerms::default();
    let mut g_logits = vec![0.0; k];
    let mut g_lines = vec![[0.0; 4]; k];
    for (i, &x) in logits.iter().enumerate() {
        let target = assignment.pred_to_truth[i];
        let (l, g) = focal_loss(x, target.is_some());
        terms.class += weights.w_class * l;
        g_logits[i] = weights.w_class * g;
        if let Some(t) = target {
            let (l, g) = line_l1(&lines[i], &truths[t]);
            terms.line += weights.w_line * l;
            g_lines[i] = g.map(|v| weights.w_line * v);
        }
    }
    (terms, g_logits, g_lines)
}
