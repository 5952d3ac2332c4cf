use alloc::vec::Vec;

use super::{Dataset, Executor, Sampler, SamplerKind, Target};
use crate::error::{bail, Error, Result};
use crate::model::{backward, forward_with_cache, mpp_step, Confound, HeadKind, MppPlan, SiTModel};
use crate::nn::{Optimizer, OptimizerKind};
use crate::resample::RotationBank;
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
    /// Masked patch prediction with the given mask ratio.
    Mpp(f64),
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::Mpp(_) => "mpp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub iterations: usize,
    /// Largest rotation angle (degrees) for augmentation; `None` disables it.
    pub augmentation: Option<f64>,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub loss: LossKind,
    /// Checkpoint interval in iterations; the final state is always offered.
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, loss: LossKind) -> Self {
        TrainConfig {
            optimizer,
            batch_size: 8,
            iterations: 100,
            augmentation: None,
            sampler: SamplerKind::Uniform,
            seed: 0,
            loss,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch size must be at least 1");
        }
        if self.iterations == 0 {
            bail!(Config, "iteration budget must be at least 1");
        }
        if self.checkpoint_every == Some(0) {
            bail!(Config, "checkpoint interval must be at least 1");
        }
        if let LossKind::Mpp(r) = self.loss {
            if !(r > 0.0 && r <= 1.0) {
                bail!(Config, "mask ratio {} outside (0, 1]", r);
            }
        }
        if let Some(a) = self.augmentation {
            if !(a >= 0.0 && a.is_finite()) {
                bail!(Config, "augmentation angle cap {} is invalid", a);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hooks called by the training loop between optimizer steps.
pub trait Observer<T> {
    fn iteration(&mut self, _iteration: usize, _loss: f64, _model: &SiTModel<T>) -> Result<Control> {
        Ok(Control::Continue)
    }

    fn checkpoint(&mut self, _iteration: usize, _model: &SiTModel<T>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoObserver;

impl<T> Observer<T> for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Batch-mean loss per iteration.
    pub history: Vec<f64>,
    pub stopped_early: bool,
}

/// Random stream for one batch slot: a pure function of the seed, the
/// iteration and the slot, independent of which worker runs it.
pub fn example_rng(seed: u64, iteration: usize, slot: usize) -> RngState {
    RngState::with_stream(seed, 1).fork(((iteration as u64) << 24) ^ slot as u64)
}

struct SlotResult<T> {
    loss: f64,
    grads: SiTModel<T>,
}

fn check_compat<T: Scalar>(model: &SiTModel<T>, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        bail!(Argument, "training set is empty");
    }
    let mc = &model.config;
    if data.table.patch_count() != mc.num_patches
        || data.table.vertices_per_patch() != mc.vertices_per_patch
        || data.channels() != mc.channels
    {
        bail!(
            Shape,
            "data is {}×{}×{}, model expects {}×{}×{}",
            data.table.patch_count(),
            data.table.vertices_per_patch(),
            data.channels(),
            mc.num_patches,
            mc.vertices_per_patch,
            mc.channels
        );
    }
    match (cfg.loss, mc.head) {
        (LossKind::Mse, HeadKind::Regression) | (LossKind::CrossEntropy, HeadKind::Classification(_)) => {}
        (LossKind::Mpp(_), _) if model.mpp.is_some() => {}
        (LossKind::Mpp(_), _) => bail!(Config, "masked patch prediction needs a model with an MPP head"),
        (l, h) => bail!(Config, "{} loss does not fit a {:?} head", l.name(), h),
    }
    if let LossKind::CrossEntropy = cfg.loss {
        let k = mc.head.outputs();
        for (i, e) in data.examples.iter().enumerate() {
            match e.target {
                Target::Class(c) if c < k => {}
                t => bail!(Validation, "example {} has target {:?} for a {}-class head", i, t, k),
            }
        }
    }
    if model.deconfounder.is_some() && data.examples.iter().any(|e| e.confound.is_none()) {
        bail!(Validation, "model has a deconfounder but some examples have no confound");
    }
    Ok(())
}

/// Loss and `∂loss/∂prediction` for one example.
fn head_loss<T: Scalar>(pred: &[T], target: Target, loss: LossKind) -> Result<(f64, Vec<T>)> {
    match (loss, target) {
        (LossKind::Mse, t) => {
            let e = pred[0].as_f64() - t.value();
            Ok((e * e, alloc::vec![T::of(2.0 * e)]))
        }
        (LossKind::CrossEntropy, Target::Class(c)) => {
            let max = pred.iter().map(|p| p.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = pred.iter().map(|p| libm::exp(p.as_f64() - max)).collect();
            let z: f64 = exps.iter().sum();
            let loss = -(libm::log(exps[c] / z));
            let d = exps.iter().enumerate().map(|(k, e)| T::of(e / z - if k == c { 1.0 } else { 0.0 })).collect();
            Ok((loss, d))
        }
        _ => bail!(Validation, "target {:?} does not fit {} loss", target, loss.name()),
    }
}

fn run<T: Scalar, E: Executor, O: Observer<T>>(
    model: &mut SiTModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    augmentation: Option<&RotationBank>,
    exec: &E,
    observer: &mut O,
) -> Result<TrainReport> {
    check_compat(model, data, cfg)?;
    let bank = match (cfg.augmentation, augmentation) {
        (None, _) => None,
        (Some(_), None) => bail!(Config, "augmentation requested without a rotation bank"),
        (Some(_), Some(b)) if b.mesh() != data.table.carrier() => {
            bail!(Config, "rotation bank is built on a different mesh than the data")
        }
        (Some(_), Some(b)) => Some(b),
    };
    let plain: Vec<Tensor<T>> = if bank.is_none() {
        (0..data.len()).map(|i| data.sequence(i).map(|s| s.to_tensor())).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let master = RngState::new(cfg.seed);
    let mut sampler = Sampler::for_dataset(cfg.sampler, data, master.fork(0x5a3))?;
    let mut aug_rng = master.fork(0xa06);
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut stopped_early = false;
    let mut last_checkpoint = 0;
    let b = cfg.batch_size;

    for it in 1..=cfg.iterations {
        let batch: Vec<usize> = sampler.by_ref().take(b).collect();
        let rotations: Vec<usize> = match bank {
            Some(bank) => (0..b).map(|_| aug_rng.below(bank.len())).collect(),
            None => Vec::new(),
        };
        let confounds: Vec<Confound<T>> = match model.deconfounder.as_mut() {
            Some(dc) if !matches!(cfg.loss, LossKind::Mpp(_)) => {
                let raw: Vec<f64> = batch.iter().map(|&i| data.examples[i].confound.unwrap_or(0.0)).collect();
                dc.normalize_batch(&raw)?.into_iter().map(Confound::Normalized).collect()
            }
            _ => alloc::vec![Confound::None; b],
        };
        let snapshot: &SiTModel<T> = model;
        let results: Vec<Result<SlotResult<T>>> = exec.run(b, |slot| {
            let i = batch[slot];
            let mut rng = example_rng(cfg.seed, it, slot);
            let seq = match bank {
                Some(bank) => {
                    let field = bank.apply(rotations[slot], &data.examples[i].field)?;
                    crate::patching::extract_sequence(&field, &data.table)?.to_tensor()
                }
                None => plain[i].clone(),
            };
            let mut grads = snapshot.zeros_like();
            let loss = match cfg.loss {
                LossKind::Mpp(ratio) => {
                    let plan = MppPlan::draw(snapshot.config.num_patches, ratio, &mut rng)?;
                    mpp_step(snapshot, &seq, plan, &mut rng, true, Some(&mut grads))?.as_f64()
                }
                kind => {
                    let (pred, cache) = forward_with_cache(snapshot, &seq, &confounds[slot], &mut rng, true)?;
                    let (loss, dpred) = head_loss(&pred, data.examples[i].target, kind)?;
                    backward(snapshot, &cache, &dpred, &mut grads)?;
                    loss
                }
            };
            Ok(SlotResult { loss, grads })
        });
        let mut total = model.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let r = r?;
            loss += r.loss;
            total.axpy_params(T::one(), &r.grads);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { iteration: it, detail: alloc::format!("{} loss is {}", cfg.loss.name(), loss) });
        }
        let inv = T::of(1.0 / b as f64);
        let grads: Vec<Tensor<T>> = total
            .params()
            .into_iter()
            .map(|(_, g)| {
                let mut g = g.clone();
                g.scale(inv);
                g
            })
            .collect();
        {
            let params: Vec<&mut Tensor<T>> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            optimizer.step(params, grads.iter().collect())?;
        }
        if !model.all_finite() {
            return Err(Error::NonFinite { iteration: it, detail: alloc::string::String::from("parameters became non-finite") });
        }
        history.push(loss);
        log::debug!("iteration {} loss {:.6e}", it, loss);
        if cfg.checkpoint_every.is_some_and(|k| it % k == 0) {
            observer.checkpoint(it, model)?;
            last_checkpoint = it;
        }
        if observer.iteration(it, loss, model)? == Control::Stop {
            stopped_early = it < cfg.iterations;
            break;
        }
    }
    if last_checkpoint != history.len() {
        observer.checkpoint(history.len(), model)?;
    }
    Ok(TrainReport { history, stopped_early })
}

/// Supervised training with the MSE or cross-entropy objective.
pub fn train_loop<T: Scalar, E: Executor, O: Observer<T>>(
    model: &mut SiTModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    augmentation: Option<&RotationBank>,
    exec: &E,
    observer: &mut O,
) -> Result<TrainReport> {
    if let LossKind::Mpp(_) = cfg.loss {
        bail!(Config, "use pretrain_mpp for masked patch prediction");
    }
    run(model, data, cfg, augmentation, exec, observer)
}

/// Self-supervised pretraining by masked patch prediction. Targets are
/// ignored and the prediction head is left untouched.
pub fn pretrain_mpp<T: Scalar, E: Executor, O: Observer<T>>(
    model: &mut SiTModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    augmentation: Option<&RotationBank>,
    exec: &E,
    observer: &mut O,
) -> Result<TrainReport> {
    let LossKind::Mpp(_) = cfg.loss else {
        bail!(Config, "pretraining needs the mpp loss");
    };
    run(model, data, cfg, augmentation, exec, observer)
}
