use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        bail!(Shape, "sgd: {} params, {} grads, {} velocity", params.len(), grads.len(), velocity.len());
    }
    if momentum == T::zero() {
        for (p, &g) in params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
        return Ok(());
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Adam with bias correction; `t` is the 1-based step number.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != m.len() || params.len() != v.len() {
        bail!(Shape, "adam: mismatched buffer lengths");
    }
    if t == 0 {
        bail!(Argument, "adam step counter starts at 1");
    }
    let bc1 = T::one() - beta1.powi(t as i32);
    let bc2 = T::one() - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (T::one() - beta1) * g;
        v[i] = beta2 * v[i] + (T::one() - beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr, momentum: 0.9 }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr, .. } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer state over an ordered parameter list.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer { kind, first: Vec::new(), second: Vec::new(), step: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Update every parameter from its gradient; the lists must keep the
    /// same order across calls.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: Vec<&Tensor<T>>) -> Result<()> {
        if params.len() != grads.len() {
            bail!(Shape, "{} parameters but {} gradients", params.len(), grads.len());
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if self.first.len() != params.len() {
            bail!(State, "optimizer initialized for {} tensors, got {}", self.first.len(), params.len());
        }
        self.step += 1;
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                bail!(Shape, "parameter {} has shape {:?}, gradient {:?}", i, p.shape(), g.shape());
            }
            match self.kind {
                OptimizerKind::Sgd { lr, momentum } => {
                    sgd_step(p.data_mut(), g.data(), &mut self.first[i], T::of(lr), T::of(momentum))?
                }
                OptimizerKind::Adam { lr, beta1, beta2, eps } => adam_step(
                    p.data_mut(),
                    g.data(),
                    &mut self.first[i],
                    &mut self.second[i],
                    T::of(lr),
                    T::of(beta1),
                    T::of(beta2),
                    T::of(eps),
                    self.step,
                )?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = [1.0f64, -2.0, 3.0];
        let g = [0.5, 0.5, -1.0];
        let mut vel = [0.0; 3];
        sgd_step(&mut p, &g, &mut vel, 0.0, 0.9).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        adam_step(&mut p, &g, &mut m, &mut v, 0.0, 0.9, 0.999, 1e-8, 1).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = [1.0f64, -2.0];
        let mut vel = [0.0; 2];
        sgd_step(&mut p, &[0.5, -0.25], &mut vel, 0.1, 0.0).unwrap();
        assert_eq!(p, [1.0 - 0.1 * 0.5, -2.0 - 0.1 * -0.25]);
    }

    #[test]
    fn adam_on_parabola() {
        // f(x) = x², gradient 2x, from x = 1 with lr 0.1. Reference values
        // come from an independent scalar simulation. |x| falls
        // monotonically until the first zero crossing (step 11), after which
        // momentum carries it past the minimum and it oscillates with a
        // shrinking envelope.
        let mut x = [1.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        let mut prev = x[0].abs();
        let mut trace = Vec::new();
        for t in 1..=50 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, t).unwrap();
            if t <= 11 {
                assert!(x[0].abs() < prev, "step {t}");
            }
            prev = x[0].abs();
            trace.push(x[0]);
        }
        assert!((trace[9] - 0.07624915560691176).abs() < 1e-12);
        assert!((trace[18] + 0.2730857716970155).abs() < 1e-12);
        assert!((trace[49] + 0.0048182232226613286).abs() < 1e-12);
    }

    #[test]
    fn adam_requires_positive_step() {
        let mut p = [0.0f64];
        assert!(adam_step(&mut p, &[1.0], &mut [0.0], &mut [0.0], 0.1, 0.9, 0.999, 1e-8, 0).is_err());
    }
}
