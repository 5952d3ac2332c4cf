//! Surface vision transformer core.
//!
//! Everything in this crate is a pure function of its inputs and works
//! without `std`: mesh construction and subdivision lineage, barycentric
//! resampling on the sphere, surface patching into token sequences, a dense
//! numeric core with hand-written backward passes, the transformer encoder,
//! training loops, and attention rollout. File formats, checkpoints and the
//! command-line tool live in the `sit` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod error;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod patching;
pub mod resample;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngState;
pub use scalar::Scalar;
pub use tensor::Tensor;
