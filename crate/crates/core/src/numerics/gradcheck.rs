//! Central finite differences, the ground truth for every analytic gradient.

use alloc::format;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Result};

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `input`.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&Tensor) -> f64,
    input: &Tensor,
    step: f64,
) -> Result<Tensor> {
    let shape = input.shape().to_vec();
    let grad = finite_difference_slice(
        |v| f(&Tensor::new(shape.clone(), v.to_vec()).expect("shape preserved")),
        input.data(),
        step,
    )?;
    Tensor::new(shape, grad)
}

/// Slice form of [`finite_difference_gradient`].
pub fn finite_difference_slice(
    mut f: impl FnMut(&[f64]) -> f64,
    input: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Oracle(format!("step must be positive, got {step}")));
    }
    let mut x = input.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle(format!(
                "function not finite around coordinate {i}: f+ = {plus}, f- = {minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest coordinate-wise relative error `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true gradient is (near) zero from
/// dividing finite-difference round-off by nothing.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| libm::fabs(a - n) / libm::fabs(*a).max(libm::fabs(*n)).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn square_at_three() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let g = finite_difference_gradient(|t| t.data()[0] * t.data()[0], &x, 1e-6).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::new(vec![2, 2], vec![0.3, -1.0, 7.0, 2.5]).unwrap();
        let g = finite_difference_gradient(|t| t.data().iter().sum(), &x, 1e-6).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        assert_eq!(g.shape(), &[2, 2]);
    }

    #[test]
    fn non_finite_value_is_oracle_error() {
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let r = finite_difference_gradient(|_| f64::NAN, &x, 1e-6);
        assert!(matches!(r, Err(Error::Oracle(_))));
        assert!(finite_difference_slice(|_| 0.0, &[1.0], 0.0).is_err());
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(&[1.0], &[1.0], 1e-6), 0.0);
        assert!((relative_error(&[2.0], &[1.0], 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(&[1e-9], &[0.0], 1e-3) - 1e-6).abs() < 1e-15);
    }
}
