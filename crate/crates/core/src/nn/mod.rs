//! Dense numeric core: layers with hand-derived backward passes, optimizers
//! and initialization.

mod activation;
mod linear;
mod norm;
mod optim;

pub(crate) use activation::{softmax_backward_in_place, softmax_in_place};
pub use activation::{dropout, dropout_backward, gelu, gelu_backward, softmax_rows, softmax_rows_backward, DropoutMask};
pub use linear::{linear_backward, linear_backward_into, linear_forward, LinearGrads, LinearParams};
pub use norm::{layernorm_backward, layernorm_backward_into, layernorm_forward, LayerNormCache, LayerNormParams};
pub use optim::{adam_step, sgd_step, Optimizer, OptimizerKind};

use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::Scalar;

pub const INIT_STD: f64 = 0.02;
pub const INIT_BOUND: f64 = 2.0;

/// Truncated normal, std 0.02, cut at two standard deviations.
pub fn trunc_normal<T: Scalar>(shape: &[usize], rng: &mut RngState) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = T::of(rng.truncated_normal(INIT_STD, INIT_BOUND));
    }
    t
}
