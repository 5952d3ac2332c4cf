use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Affine parameters of a layer normalization over the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gain: Tensor<T>,
    pub shift: Tensor<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn new(dim: usize) -> Self {
        LayerNormParams { gain: Tensor::full(&[1, dim], T::one()), shift: Tensor::zeros(&[1, dim]) }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNormParams { gain: self.gain.zeros_like(), shift: self.shift.zeros_like() }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<T>,
}

pub fn layernorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.cols();
    if d == 0 {
        bail!(Shape, "layer norm over an empty dimension");
    }
    if gain.len() != d || shift.len() != d {
        bail!(Shape, "layer norm of width {} with gain {:?} and shift {:?}", d, gain.shape(), shift.shape());
    }
    let inv_d = T::one() / T::of(d as f64);
    let mut xhat = x.clone();
    let mut y = x.zeros_like();
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * rs;
        }
        rstd.push(rs);
        let (g, s) = (gain.data(), shift.data());
        for (k, out) in y.row_mut(r).iter_mut().enumerate() {
            *out = xhat.get(r, k) * g[k] + s[k];
        }
    }
    Ok((y, LayerNormCache { xhat, rstd }))
}

/// Accumulate gain/shift gradients into `grads` and return `dx`.
pub fn layernorm_backward_into<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    dy: &Tensor<T>,
    grads: &mut LayerNormParams<T>,
) -> Result<Tensor<T>> {
    let d = cache.xhat.cols();
    if dy.shape() != cache.xhat.shape() || gain.len() != d {
        bail!(Shape, "layer norm backward: dy {:?} vs cached {:?}", dy.shape(), cache.xhat.shape());
    }
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = dy.zeros_like();
    let g = gain.data();
    for r in 0..dy.rows() {
        let (dyr, xr) = (dy.row(r), cache.xhat.row(r));
        let dg = grads.gain.data_mut();
        for k in 0..d {
            dg[k] += dyr[k] * xr[k];
        }
        let ds = grads.shift.data_mut();
        for k in 0..d {
            ds[k] += dyr[k];
        }
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for k in 0..d {
            let dxh = dyr[k] * g[k];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xr[k];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        for (k, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = rs * (dyr[k] * g[k] - mean_dxhat - xr[k] * mean_dxhat_xhat);
        }
    }
    Ok(dx)
}

/// Returns `(dx, dgain, dshift)`.
pub fn layernorm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mut g = LayerNormParams { gain: gain.zeros_like(), shift: gain.zeros_like() };
    let dx = layernorm_backward_into(cache, gain, dy, &mut g)?;
    Ok((dx, g.gain, g.shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_row_maps_to_shift() {
        let x = Tensor::<f64>::full(&[2, 4], 3.5);
        let p = LayerNormParams { gain: Tensor::full(&[1, 4], 2.0), shift: Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap() };
        let (y, _) = layernorm_forward(&x, &p.gain, &p.shift, 1e-6).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), p.shift.data());
        }
    }

    #[test]
    fn normalized_rows() {
        let x = Tensor::<f64>::matrix(2, 5, vec![1.0, 4.0, -2.0, 0.5, 9.0, 3.0, 5.0, 1.0, 4.0, 2.0]).unwrap();
        let p = LayerNormParams::<f64>::new(5);
        let (y, _) = layernorm_forward(&x, &p.gain, &p.shift, 1e-6).unwrap();
        for r in 0..2 {
            let mean: f64 = y.row(r).iter().sum::<f64>() / 5.0;
            let var: f64 = y.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_dimension_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 0]);
        let g = Tensor::<f32>::zeros(&[1, 0]);
        assert!(layernorm_forward(&x, &g, &g, 1e-6).is_err());
    }
}
