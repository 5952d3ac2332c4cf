use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::Scalar;

/// Row-wise softmax, max-shifted for stability.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for r in 0..y.rows() {
        softmax_in_place(y.row_mut(r));
    }
    y
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `dx = y ⊙ (dy − ⟨y, dy⟩)` row by row, from the forward output `y`.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        bail!(Shape, "softmax backward: y {:?} vs dy {:?}", y.shape(), dy.shape());
    }
    let mut dx = dy.clone();
    for r in 0..y.rows() {
        softmax_backward_in_place(y.row(r), dx.row_mut(r));
    }
    Ok(dx)
}

pub(crate) fn softmax_backward_in_place<T: Scalar>(y: &[T], dy_to_dx: &mut [T]) {
    let inner = crate::tensor::dot(y, dy_to_dx);
    for (d, &p) in dy_to_dx.iter_mut().zip(y) {
        *d = p * (*d - inner);
    }
}

/// GELU with the exact Gaussian CDF: `x·Φ(x)`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    let half = T::of(0.5);
    let inv_sqrt2 = T::of(core::f64::consts::FRAC_1_SQRT_2);
    for v in y.data_mut() {
        *v = half * *v * (T::one() + (*v * inv_sqrt2).erf());
    }
    y
}

/// `dx = dy · (Φ(x) + x·φ(x))`
pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        bail!(Shape, "gelu backward: x {:?} vs dy {:?}", x.shape(), dy.shape());
    }
    let half = T::of(0.5);
    let inv_sqrt2 = T::of(core::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::of(0.398_942_280_401_432_7);
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let cdf = half * (T::one() + (v * inv_sqrt2).erf());
        let pdf = inv_sqrt_2pi * (-half * v * v).exp();
        *d *= cdf + v * pdf;
    }
    Ok(dx)
}

/// Per-element multipliers (`0` or `1/(1−rate)`) of one dropout draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T>(pub Vec<T>);

/// Inverted dropout. Identity (and no mask) outside training or at rate 0.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        bail!(Argument, "dropout rate {} outside [0, 1)", rate);
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.uniform() < rate { T::zero() } else { keep }).collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(DropoutMask(mask))))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&DropoutMask<T>>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = dy.clone();
    if let Some(DropoutMask(m)) = mask {
        if m.len() != dy.len() {
            bail!(Shape, "dropout mask has {} entries for {} gradients", m.len(), dy.len());
        }
        for (d, &k) in dx.data_mut().iter_mut().zip(m) {
            *d *= k;
        }
    }
    Ok(dx)
}
