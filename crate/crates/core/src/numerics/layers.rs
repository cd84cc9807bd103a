//! Dense building blocks with hand-written backward passes.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::rng::Rng;

/// `out (m x n) = a (m x k) * b (k x n)`, overwriting `out`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out[..m * n].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out (m x n) = a (m x k) * b^T` with `b` stored `(n x k)`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
}

/// `out (k x n) += a^T * b` with `a` stored `(m x k)` and `b` stored `(m x n)`.
pub fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for (p, av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            for (o, bv) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + libm::exp(-x))
}

/// Derivative of [`silu`] at `x`.
#[inline]
pub fn silu_backward(x: f64) -> f64 {
    let s = 1.0 / (1.0 + libm::exp(-x));
    s * (1.0 + x * (1.0 - s))
}

/// Affine map `y = x W^T + b` with `W` stored `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let limit = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        Self {
            weight: Tensor::from_fn(&[out_dim, in_dim], |_| rng.range(-limit, limit)),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Applies the map to `rows` stacked input vectors.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (i, o) = (self.in_dim(), self.out_dim());
        debug_assert_eq!(x.len(), rows * i);
        let mut y = vec![0.0; rows * o];
        matmul_a_bt(x, self.weight.data(), rows, i, o, &mut y);
        for r in y.chunks_mut(o) {
            for (v, b) in r.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], rows: usize, dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let (i, o) = (self.in_dim(), self.out_dim());
        matmul_at_b(dy, x, rows, o, i, grad.weight.data_mut());
        for r in dy.chunks(o) {
            for (g, v) in grad.bias.data_mut().iter_mut().zip(r) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; rows * i];
        matmul(dy, self.weight.data(), rows, o, i, &mut dx);
        dx
    }

    /// Like [`Linear::backward`] but skips the input gradient.
    pub fn backward_params(&self, x: &[f64], rows: usize, dy: &[f64], grad: &mut Linear) {
        let (i, o) = (self.in_dim(), self.out_dim());
        matmul_at_b(dy, x, rows, o, i, grad.weight.data_mut());
        for r in dy.chunks(o) {
            for (g, v) in grad.bias.data_mut().iter_mut().zip(r) {
                *g += v;
            }
        }
    }
}

/// Per-row layer normalization with learnable gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub shift: Tensor,
}

/// Normalized rows and inverse standard deviations saved by the forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    const EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor::full(&[dim], 1.0),
            shift: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Tensor::zeros(&[dim]),
            shift: Tensor::zeros(&[dim]),
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, LayerNormCache) {
        let d = self.gain.len();
        let mut y = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + Self::EPS);
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = h * self.gain.data()[j] + self.shift.data()[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let d = self.gain.len();
        let rows = cache.inv_std.len();
        let mut dx = vec![0.0; rows * d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let g = &dy[r * d..(r + 1) * d];
            let mut sum_dh = 0.0;
            let mut sum_dh_xh = 0.0;
            for j in 0..d {
                grad.gain.data_mut()[j] += g[j] * xh[j];
                grad.shift.data_mut()[j] += g[j];
                let dh = g[j] * self.gain.data()[j];
                sum_dh += dh;
                sum_dh_xh += dh * xh[j];
            }
            let is = cache.inv_std[r];
            for j in 0..d {
                let dh = g[j] * self.gain.data()[j];
                dx[r * d + j] = is * (dh - sum_dh / d as f64 - xh[j] * sum_dh_xh / d as f64);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_slice;

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.range(-1.0, 1.0)).collect()
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = Rng::new(9, 0);
        let (m, k, n) = (3, 4, 5);
        let a = rand_vec(&mut rng, m * k);
        let b = rand_vec(&mut rng, k * n);
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, m, k, n, &mut c);
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_a_bt(&a, &bt, m, k, n, &mut c2);
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c3 = vec![0.0; m * n];
        matmul_at_b(&at, &b, k, m, n, &mut c3);
        for i in 0..m * n {
            assert!((c[i] - c2[i]).abs() < 1e-14 && (c[i] - c3[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = Rng::new(10, 0);
        let mut lin = Linear::zeros(4, 3);
        lin.weight = Tensor::from_fn(&[3, 4], |_| rng.range(-1.0, 1.0));
        lin.bias = Tensor::from_fn(&[3], |_| rng.range(-1.0, 1.0));
        let x = rand_vec(&mut rng, 2 * 4);
        let up = rand_vec(&mut rng, 2 * 3);
        let mut g = Linear::zeros(4, 3);
        let dx = lin.backward(&x, 2, &up, &mut g);
        let loss = |l: &Linear, x: &[f64]| -> f64 {
            l.forward(x, 2).iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let num = finite_difference_slice(|v| loss(&lin, v), &x, 1e-6).unwrap();
        for (a, b) in num.iter().zip(&dx) {
            assert!((a - b).abs() < 1e-8);
        }
        let num = finite_difference_slice(
            |v| {
                let mut l = lin.clone();
                l.weight.data_mut().copy_from_slice(v);
                loss(&l, &x)
            },
            lin.weight.data(),
            1e-6,
        )
        .unwrap();
        for (a, b) in num.iter().zip(g.weight.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = Rng::new(12, 0);
        let mut ln = LayerNorm::new(5);
        ln.gain = Tensor::from_fn(&[5], |_| rng.range(0.5, 1.5));
        ln.shift = Tensor::from_fn(&[5], |_| rng.range(-0.5, 0.5));
        let x = rand_vec(&mut rng, 3 * 5);
        let up = rand_vec(&mut rng, 3 * 5);
        let (_, cache) = ln.forward(&x, 3);
        let mut g = LayerNorm::zeros(5);
        let dx = ln.backward(&cache, &up, &mut g);
        let num = finite_difference_slice(
            |v| ln.forward(v, 3).0.iter().zip(&up).map(|(a, b)| a * b).sum(),
            &x,
            1e-6,
        )
        .unwrap();
        for (a, b) in num.iter().zip(&dx) {
            assert!((a - b).abs() < 1e-7, "{a} {b}");
        }
    }

    #[test]
    fn silu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let num = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((num - silu_backward(x)).abs() < 1e-8);
        }
    }
}
