//! Dense tensor substrate shared by every operator in the crate.
//!
//! All values are `f64`. Gradients are written by hand per operator; there is
//! no autograd graph. [`finite_difference_gradient`] is the oracle those
//! hand-written gradients are certified against.

mod conv;
mod gradcheck;
mod layers;
mod sample;
mod softmax;
mod tensor;

pub use conv::{conv2d, conv2d_backward, conv2d_strided, Conv2d, ConvGrads};
pub use gradcheck::{finite_difference_gradient, finite_difference_slice, relative_error};
pub use layers::{
    matmul, matmul_at_b, matmul_a_bt, silu, silu_backward, LayerNorm, LayerNormCache, Linear,
};
pub use sample::{bilinear_backward, bilinear_sample, bilinear_sample_into, BilinearTaps};
pub use softmax::{softmax_backward_in_place, softmax_in_place, softmax_over_samples};
pub use tensor::{FeatureMap, Tensor};
