use crate::error::{bail, Result};
use crate::rng::RngState;
use crate::tensor::{axpy, matmul_nn_acc, matmul_nt, matmul_tn_acc, Tensor};
use crate::Scalar;

/// `y = x·Wᵀ + b` with `W` stored `out × in`. The bias is optional: the
/// attention projections have none.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dweight: Tensor<T>,
    pub dbias: Option<Tensor<T>>,
}

impl<T: Scalar> LinearParams<T> {
    pub fn new(out: usize, inp: usize, bias: bool, rng: &mut RngState) -> Self {
        LinearParams { weight: super::trunc_normal(&[out, inp], rng), bias: bias.then(|| Tensor::zeros(&[1, out])) }
    }

    pub fn zeros(out: usize, inp: usize, bias: bool) -> Self {
        LinearParams { weight: Tensor::zeros(&[out, inp]), bias: bias.then(|| Tensor::zeros(&[1, out])) }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        LinearParams { weight: self.weight.zeros_like(), bias: self.bias.as_ref().map(Tensor::zeros_like) }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

pub fn linear_forward<T: Scalar>(x: &Tensor<T>, p: &LinearParams<T>) -> Result<Tensor<T>> {
    let (m, k) = (x.rows(), x.cols());
    if k != p.in_dim() {
        bail!(Shape, "linear input has {} features, layer expects {}", k, p.in_dim());
    }
    let n = p.out_dim();
    let mut y = Tensor::zeros(&[m, n]);
    matmul_nt(x.data(), p.weight.data(), m, k, n, y.data_mut());
    if let Some(b) = &p.bias {
        for r in 0..m {
            axpy(T::one(), b.data(), y.row_mut(r));
        }
    }
    Ok(y)
}

/// Accumulate `dW += dyᵀ·x`, `db += Σ dy` into `grads` and return `dx = dy·W`
/// when `want_dx`.
pub fn linear_backward_into<T: Scalar>(
    x: &Tensor<T>,
    p: &LinearParams<T>,
    dy: &Tensor<T>,
    grads: &mut LinearParams<T>,
    want_dx: bool,
) -> Result<Option<Tensor<T>>> {
    let (m, k, n) = (x.rows(), x.cols(), p.out_dim());
    if k != p.in_dim() || dy.rows() != m || dy.cols() != n {
        bail!(Shape, "linear backward: x {:?}, dy {:?}, weight {:?}", x.shape(), dy.shape(), p.weight.shape());
    }
    matmul_tn_acc(dy.data(), x.data(), m, n, k, grads.weight.data_mut());
    if let Some(db) = grads.bias.as_mut() {
        for r in 0..m {
            axpy(T::one(), dy.row(r), db.data_mut());
        }
    }
    if !want_dx {
        return Ok(None);
    }
    let mut dx = Tensor::zeros(&[m, k]);
    matmul_nn_acc(dy.data(), p.weight.data(), m, n, k, dx.data_mut());
    Ok(Some(dx))
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, p: &LinearParams<T>, dy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let mut g = p.zeros_like();
    let dx = linear_backward_into(x, p, dy, &mut g, true)?.expect("dx requested");
    Ok(LinearGrads { dx, dweight: g.weight, dbias: g.bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn identity_weights_pass_through() {
        let mut p = LinearParams::<f64>::zeros(3, 3, true);
        for i in 0..3 {
            p.weight.set(i, i, 1.0);
        }
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, 0.5]).unwrap();
        assert_eq!(linear_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = RngState::new(1);
        let p = LinearParams::<f64>::new(4, 3, true, &mut rng);
        let x = crate::nn::trunc_normal::<f64>(&[5, 3], &mut rng);
        let g = linear_backward(&x, &p, &Tensor::zeros(&[5, 4])).unwrap();
        assert!(g.dx.data().iter().chain(g.dweight.data()).chain(g.dbias.unwrap().data()).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let p = LinearParams::<f32>::zeros(3, 4, false);
        assert!(linear_forward(&Tensor::zeros(&[2, 3]), &p).is_err());
    }

    #[test]
    fn bias_added_per_row() {
        let mut p = LinearParams::<f32>::zeros(2, 1, true);
        p.bias.as_mut().unwrap().data_mut().copy_from_slice(&[1.0, -1.0]);
        let y = linear_forward(&Tensor::zeros(&[3, 1]), &p).unwrap();
        let want: Vec<f32> = [1.0, -1.0].repeat(3);
        assert_eq!(y.data(), &want[..]);
    }
}
