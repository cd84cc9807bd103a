use alloc::vec::Vec;

use super::Tensor;
use crate::error::shape_err;
use crate::Result;

/// Numerically stable softmax of one contiguous group.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// Turns `grad` (w.r.t. the softmax output `y`) into the gradient w.r.t. the
/// logits: `y * (grad - <y, grad>)`.
pub fn softmax_backward_in_place(y: &[f64], grad: &mut [f64]) {
    let dot: f64 = y.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
    for (g, yi) in grad.iter_mut().zip(y) {
        *g = yi * (*g - dot);
    }
}

/// Softmax over the flattened `(L, P)` entries of each head of an `(M, L, P)`
/// logit tensor, so every head's weights sum to one.
pub fn softmax_over_samples(logits: &Tensor) -> Result<Tensor> {
    let [m, l, p] = match *logits.shape() {
        [m, l, p] => [m, l, p],
        _ => return Err(shape_err!("expected (M, L, P) logits, got {:?}", logits.shape())),
    };
    let group = l * p;
    let mut data: Vec<f64> = logits.data().to_vec();
    if group > 0 {
        for head in data.chunks_mut(group) {
            softmax_in_place(head);
        }
    }
    Tensor::new(alloc::vec![m, l, p], data)
}
