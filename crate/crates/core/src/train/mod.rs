//! Datasets, sampling, training loops and evaluation.

mod dataset;
mod exec;
mod trainer;
mod metrics;
mod sampler;

pub use dataset::{gen_synthetic, synthetic_basis, Dataset, Example, Target, SYNTHETIC_CHANNELS, SYNTHETIC_TARGET_BASIS};
pub use exec::{Executor, Sequential};
pub use trainer::{
    example_rng, pretrain_mpp, train_loop, Control, LossKind, NoObserver, Observer, TrainConfig, TrainReport,
};
pub use metrics::{auc, evaluate, mae, mse, pearson, predict, Metrics};
pub use sampler::{Sampler, SamplerKind};
