//! Adam with decoupled weight decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::params::ParamSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    /// Learning rate of parameters whose name starts with `backbone.`.
    pub backbone_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

/// Optimizer state over a parameter set's flat inventory. Weight decay only
/// touches tensors with two or more axes (weights, kernels, embeddings).
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: OptimizerConfig,
    /// Per-tensor `(length, learning rate, decays)`.
    groups: Vec<(usize, f64, bool)>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Scales `grads` so their Euclidean norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

impl AdamW {
    pub fn new<P: ParamSet>(params: &P, config: OptimizerConfig) -> Self {
        let groups: Vec<(usize, f64, bool)> = params
            .named_tensors()
            .iter()
            .map(|(name, t)| {
                let lr = if name.starts_with("backbone.") {
                    config.backbone_lr
                } else {
                    config.lr
                };
                (t.len(), lr, t.shape().len() >= 2)
            })
            .collect();
        let n = params.num_values();
        Self {
            config,
            groups,
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rates multiplied by `lr_scale`. `grads` is
    /// flat in inventory order. A zero effective learning rate leaves the
    /// parameters bitwise unchanged.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &[f64], lr_scale: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let mut off = 0;
        for (t, &(len, lr, decays)) in params.tensors_mut().into_iter().zip(&self.groups) {
            let lr = lr * lr_scale;
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let j = off + i;
                let g = grads[j];
                self.m[j] = c.beta1 * self.m[j] + (1.0 - c.beta1) * g;
                self.v[j] = c.beta2 * self.v[j] + (1.0 - c.beta2) * g * g;
                if lr == 0.0 {
                    continue;
                }
                let mhat = self.m[j] / bc1;
                let vhat = self.v[j] / bc2;
                let mut update = mhat / (libm::sqrt(vhat) + c.eps);
                if decays {
                    update += c.weight_decay * *p;
                }
                *p -= lr * update;
            }
            off += len;
        }
    }
}
