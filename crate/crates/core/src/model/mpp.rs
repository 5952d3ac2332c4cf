//! Masked patch prediction: corruption of patch embeddings, the masked
//! reconstruction loss and its training pass.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{embed_backward, embed_forward, encode, encode_backward, Confound};
use super::params::SiTModel;
use crate::error::{bail, Result};
use crate::nn::{linear_backward_into, linear_forward};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::Scalar;

pub const MASK_TOKEN_SHARE: f64 = 0.8;
pub const SWAP_SHARE: f64 = 0.1;

/// What happened to one position of the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    Untouched,
    MaskToken,
    /// Replaced by the original embedding of this position.
    Swap(usize),
    /// Selected but kept as is.
    Keep,
}

/// One draw of the corruption pattern over N positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MppPlan {
    actions: Vec<Corruption>,
}

impl MppPlan {
    /// Select `round(ratio·n)` positions without replacement, then assign
    /// each to mask token / swap / keep with probabilities 0.8/0.1/0.1.
    pub fn draw(n: usize, ratio: f64, rng: &mut RngState) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            bail!(Argument, "mask ratio {} outside (0, 1]", ratio);
        }
        if n == 0 {
            bail!(Argument, "cannot mask an empty sequence");
        }
        let count = libm::round(ratio * n as f64) as usize;
        let mut actions = vec![Corruption::Untouched; n];
        for i in rng.sample_indices(n, count.max(1)) {
            let u = rng.uniform();
            actions[i] = if u < MASK_TOKEN_SHARE {
                Corruption::MaskToken
            } else if u < MASK_TOKEN_SHARE + SWAP_SHARE {
                Corruption::Swap(rng.below(n))
            } else {
                Corruption::Keep
            };
        }
        Ok(MppPlan { actions })
    }

    pub fn from_actions(actions: Vec<Corruption>) -> Self {
        MppPlan { actions }
    }

    pub fn actions(&self) -> &[Corruption] {
        &self.actions
    }

    pub fn mask(&self) -> Vec<bool> {
        self.actions.iter().map(|a| *a != Corruption::Untouched).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.actions.iter().filter(|a| **a != Corruption::Untouched).count()
    }

    pub fn apply<T: Scalar>(&self, embedded: &Tensor<T>, mask_token: &Tensor<T>) -> Result<Tensor<T>> {
        if embedded.rows() != self.actions.len() {
            bail!(Shape, "plan covers {} positions, sequence has {}", self.actions.len(), embedded.rows());
        }
        if mask_token.len() != embedded.cols() {
            bail!(Shape, "mask token has {} entries, embeddings have {}", mask_token.len(), embedded.cols());
        }
        let mut out = embedded.clone();
        for (i, a) in self.actions.iter().enumerate() {
            match *a {
                Corruption::MaskToken => out.row_mut(i).copy_from_slice(mask_token.data()),
                Corruption::Swap(j) => out.row_mut(i).copy_from_slice(embedded.row(j)),
                Corruption::Untouched | Corruption::Keep => {}
            }
        }
        Ok(out)
    }

    /// Route the gradient of the corrupted embeddings back to the original
    /// embeddings and the mask token.
    pub fn backward<T: Scalar>(&self, dout: &Tensor<T>, dmask_token: &mut Tensor<T>) -> Result<Tensor<T>> {
        let mut de = dout.clone();
        for (i, a) in self.actions.iter().enumerate() {
            match *a {
                Corruption::MaskToken => {
                    crate::tensor::axpy(T::one(), dout.row(i), dmask_token.data_mut());
                    de.row_mut(i).fill(T::zero());
                }
                Corruption::Swap(_) => de.row_mut(i).fill(T::zero()),
                Corruption::Untouched | Corruption::Keep => {}
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if let Corruption::Swap(j) = *a {
                crate::tensor::axpy(T::one(), dout.row(i), de.row_mut(j));
            }
        }
        Ok(de)
    }
}

/// Corrupt `embedded` (N×D) and return it with the boolean mask.
pub fn mpp_corrupt<T: Scalar>(
    embedded: &Tensor<T>,
    mask_token: &Tensor<T>,
    ratio: f64,
    rng: &mut RngState,
) -> Result<(Tensor<T>, Vec<bool>)> {
    let plan = MppPlan::draw(embedded.rows(), ratio, rng)?;
    Ok((plan.apply(embedded, mask_token)?, plan.mask()))
}

/// Mean squared error over the masked rows.
pub fn mpp_loss<T: Scalar>(decoded: &Tensor<T>, target: &Tensor<T>, mask: &[bool]) -> Result<T> {
    if decoded.shape() != target.shape() || mask.len() != decoded.rows() {
        bail!(Shape, "decoded {:?}, target {:?}, mask of {}", decoded.shape(), target.shape(), mask.len());
    }
    let rows = mask.iter().filter(|m| **m).count();
    if rows == 0 {
        bail!(Argument, "mask selects no patches");
    }
    let mut sum = 0.0;
    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for (a, b) in decoded.row(r).iter().zip(target.row(r)) {
            let e = a.as_f64() - b.as_f64();
            sum += e * e;
        }
    }
    Ok(T::of(sum / (rows * decoded.cols()) as f64))
}

/// Loss of one sequence under `plan`, accumulating gradients into `grads`
/// when given.
pub fn mpp_step<T: Scalar>(
    model: &SiTModel<T>,
    seq: &Tensor<T>,
    plan: MppPlan,
    rng: &mut RngState,
    training: bool,
    grads: Option<&mut SiTModel<T>>,
) -> Result<T> {
    let Some(head) = &model.mpp else {
        bail!(State, "model has no MPP head");
    };
    let mask = plan.mask();
    let (x0, ecache) = embed_forward(model, seq, &Confound::None, Some(plan), rng, training)?;
    let (normed, blocks, final_ln) = encode(model, x0, rng, training)?;
    let tokens = normed.slice_rows(1, normed.rows());
    let decoded = linear_forward(&tokens, &head.decoder)?;
    let loss = mpp_loss(&decoded, seq, &mask)?;
    let Some(grads) = grads else {
        return Ok(loss);
    };
    let rows = mask.iter().filter(|m| **m).count();
    let scale = 2.0 / (rows * decoded.cols()) as f64;
    let mut ddec = Tensor::zeros(&[decoded.rows(), decoded.cols()]);
    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for ((d, &a), &b) in ddec.row_mut(r).iter_mut().zip(decoded.row(r)).zip(seq.row(r)) {
            *d = T::of(scale * (a.as_f64() - b.as_f64()));
        }
    }
    let g = grads.mpp.as_mut().expect("gradient buffer mirrors the model");
    let dtokens = linear_backward_into(&tokens, &head.decoder, &ddec, &mut g.decoder, true)?.expect("dx");
    let d = model.config.dim;
    let mut dnormed = Tensor::zeros(&[normed.rows(), d]);
    dnormed.data_mut()[d..].copy_from_slice(dtokens.data());
    let dx0 = encode_backward(model, &blocks, &final_ln, &dnormed, grads)?;
    embed_backward(model, &ecache, &dx0, grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_count() {
        let mut rng = RngState::new(0);
        let plan = MppPlan::draw(320, 0.5, &mut rng).unwrap();
        assert_eq!(plan.masked_count(), 160);
        let plan = MppPlan::draw(7, 0.5, &mut rng).unwrap();
        assert_eq!(plan.masked_count(), 4);
    }

    #[test]
    fn bad_ratio() {
        let mut rng = RngState::new(0);
        assert!(MppPlan::draw(10, 0.0, &mut rng).is_err());
        assert!(MppPlan::draw(10, 1.5, &mut rng).is_err());
    }

    #[test]
    fn loss_cases() {
        let t = Tensor::<f64>::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(mpp_loss(&t, &t, &[true, false, true]).unwrap(), 0.0);
        let mut garbage = t.clone();
        garbage.row_mut(1).fill(99.0);
        assert_eq!(mpp_loss(&garbage, &t, &[true, false, true]).unwrap(), 0.0);
        let mut off = t.clone();
        off.row_mut(0).iter_mut().for_each(|x| *x += 2.0);
        assert_eq!(mpp_loss(&off, &t, &[true, false, false]).unwrap(), 4.0);
        assert!(mpp_loss(&t, &t, &[false, false, false]).is_err());
    }

    #[test]
    fn corruption_rows() {
        let e = Tensor::<f64>::matrix(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let tok = Tensor::<f64>::matrix(1, 2, vec![9.0, 9.0]).unwrap();
        let plan = MppPlan::from_actions(vec![Corruption::MaskToken, Corruption::Swap(0), Corruption::Keep]);
        let out = plan.apply(&e, &tok).unwrap();
        assert_eq!(out.data(), &[9.0, 9.0, 1.0, 1.0, 3.0, 3.0]);
        let mut dtok = Tensor::zeros(&[1, 2]);
        let d = Tensor::<f64>::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let de = plan.backward(&d, &mut dtok).unwrap();
        assert_eq!(dtok.data(), &[1.0, 2.0]);
        assert_eq!(de.data(), &[3.0, 4.0, 0.0, 0.0, 5.0, 6.0]);
    }
}
