//! Named parameter inventories.
//!
//! Every trainable structure lists its tensors in a fixed order with dotted
//! names. The same order is used to flatten parameters for the optimizer, to
//! reduce gradients, and to lay out checkpoint payloads.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::numerics::{LayerNorm, Linear, Tensor};

pub trait ParamSet {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>);

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    /// `(name, shape)` pairs in inventory order.
    fn inventory(&self) -> Vec<(String, Vec<usize>)> {
        self.named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect()
    }

    fn num_values(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_values());
        for (_, t) in self.named_tensors() {
            v.extend_from_slice(t.data());
        }
        v
    }

    /// Overwrites all parameters from a flat buffer in inventory order.
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat buffer length mismatch");
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.collect_mut(&mut out);
        out
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl ParamSet for Tensor {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((String::from(prefix), self));
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(self);
    }
}

impl ParamSet for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl ParamSet for LayerNorm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "gain"), &self.gain));
        out.push((join(prefix, "shift"), &self.shift));
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.gain);
        out.push(&mut self.shift);
    }
}

impl<T: ParamSet> ParamSet for Vec<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, item) in self.iter().enumerate() {
            item.collect(&join(prefix, &format!("{i}")), out);
        }
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for item in self.iter_mut() {
            item.collect_mut(out);
        }
    }
}

/// Implements [`ParamSet`] for a struct by listing its parameter fields.
macro_rules! param_set {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::params::ParamSet for $ty {
            fn collect<'a>(
                &'a self,
                prefix: &str,
                out: &mut alloc::vec::Vec<(alloc::string::String, &'a $crate::numerics::Tensor)>,
            ) {
                $( self.$field.collect(&$crate::params::join(prefix, stringify!($field)), out); )+
            }
            fn collect_mut<'a>(
                &'a mut self,
                out: &mut alloc::vec::Vec<&'a mut $crate::numerics::Tensor>,
            ) {
                $( self.$field.collect_mut(out); )+
            }
        }
    };
}
pub(crate) use param_set;

#[cfg(test)]
mod tests {
    use super::*;

    struct Pair {
        a: Linear,
        b: Vec<Linear>,
    }
    param_set!(Pair { a, b });

    #[test]
    fn names_and_flatten_order() {
        let mut p = Pair {
            a: Linear::zeros(2, 1),
            b: alloc::vec![Linear::zeros(1, 1)],
        };
        let names: Vec<String> = p.inventory().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["a.weight", "a.bias", "b.0.weight", "b.0.bias"]);
        p.assign_flat(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p.a.weight.data(), &[1.0, 2.0]);
        assert_eq!(p.b[0].bias.data(), &[5.0]);
        assert_eq!(p.flatten(), [1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
