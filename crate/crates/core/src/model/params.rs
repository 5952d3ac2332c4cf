use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::SiTConfig;
use crate::error::{bail, Result};
use crate::nn::{trunc_normal, LayerNormParams, LinearParams};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::Scalar;

/// One pre-norm encoder block. The attention projections carry no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNormParams<T>,
    pub wq: LinearParams<T>,
    pub wk: LinearParams<T>,
    pub wv: LinearParams<T>,
    pub wo: LinearParams<T>,
    pub ln2: LayerNormParams<T>,
    pub ffn1: LinearParams<T>,
    pub ffn2: LinearParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MppHead<T> {
    pub decoder: LinearParams<T>,
    pub mask_token: Tensor<T>,
}

/// Batch-normalized confound projected to a D-vector. The normalization is
/// not affine; `running` holds `[mean, variance, updates]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconfounder<T> {
    pub fc: LinearParams<T>,
    pub running: Tensor<T>,
}

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

impl<T: Scalar> Deconfounder<T> {
    pub fn is_initialized(&self) -> bool {
        self.running.data()[2] > T::zero()
    }

    /// Seed the running statistics from training data.
    pub fn init_stats(&mut self, values: &[f64]) -> Result<()> {
        if values.is_empty() {
            bail!(Argument, "cannot initialize confound statistics from no values");
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        self.running.data_mut().copy_from_slice(&[T::of(mean), T::of(var), T::one()]);
        Ok(())
    }

    /// Normalize a training batch with its own statistics and fold them
    /// into the running estimate.
    pub fn normalize_batch(&mut self, values: &[f64]) -> Result<Vec<T>> {
        if values.is_empty() {
            bail!(Argument, "empty confound batch");
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let unbiased = if values.len() > 1 { var * n / (n - 1.0) } else { var };
        let r = self.running.data_mut();
        if r[2] > T::zero() {
            let m = BATCHNORM_MOMENTUM;
            r[0] = T::of((1.0 - m) * r[0].as_f64() + m * mean);
            r[1] = T::of((1.0 - m) * r[1].as_f64() + m * unbiased);
            r[2] += T::one();
        } else {
            r[0] = T::of(mean);
            r[1] = T::of(unbiased);
            r[2] = T::one();
        }
        let rs = 1.0 / libm::sqrt(var + BATCHNORM_EPS);
        Ok(values.iter().map(|v| T::of((v - mean) * rs)).collect())
    }

    /// Evaluation-mode normalization with the running statistics.
    pub fn normalize(&self, value: f64) -> Result<T> {
        if !self.is_initialized() {
            bail!(State, "confound statistics are uninitialized");
        }
        let r = self.running.data();
        Ok(T::of((value - r[0].as_f64()) / libm::sqrt(r[1].as_f64() + BATCHNORM_EPS)))
    }
}

/// All learnable state of the surface vision transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct SiTModel<T> {
    pub config: SiTConfig,
    pub embed: LinearParams<T>,
    pub token: Tensor<T>,
    pub pos: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub final_ln: LayerNormParams<T>,
    pub head: LinearParams<T>,
    pub mpp: Option<MppHead<T>>,
    pub deconfounder: Option<Deconfounder<T>>,
}

impl<T: Scalar> SiTModel<T> {
    /// Truncated-normal weights (std 0.02), zero biases, unit layer-norm gains.
    pub fn new(config: SiTConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let pd = config.patch_dim();
        let embed = LinearParams::new(d, pd, true, rng);
        let token = trunc_normal(&[1, d], rng);
        let pos = trunc_normal(&[config.seq_len(), d], rng);
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1: LayerNormParams::new(d),
                wq: LinearParams::new(d, d, false, rng),
                wk: LinearParams::new(d, d, false, rng),
                wv: LinearParams::new(d, d, false, rng),
                wo: LinearParams::new(d, d, false, rng),
                ln2: LayerNormParams::new(d),
                ffn1: LinearParams::new(config.mlp_dim, d, true, rng),
                ffn2: LinearParams::new(d, config.mlp_dim, true, rng),
            })
            .collect();
        let final_ln = LayerNormParams::new(d);
        let head = LinearParams::new(config.head.outputs(), d, true, rng);
        let mpp = config
            .mpp_head
            .then(|| MppHead { decoder: LinearParams::new(pd, d, true, rng), mask_token: trunc_normal(&[1, d], rng) });
        let deconfounder =
            config.deconfounder.then(|| Deconfounder { fc: LinearParams::new(d, 1, true, rng), running: Tensor::zeros(&[1, 3]) });
        Ok(SiTModel { config, embed, token, pos, blocks, final_ln, head, mpp, deconfounder })
    }

    /// Same structure, every learnable tensor zero. Used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.params_mut() {
            t.fill(T::zero());
        }
        if let Some(dc) = z.deconfounder.as_mut() {
            dc.running.fill(T::zero());
        }
        z
    }

    /// Learnable tensors in a fixed order with stable names.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        fn lin<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, name: &str, p: &'a LinearParams<T>) {
            out.push((format!("{name}.weight"), &p.weight));
            if let Some(b) = &p.bias {
                out.push((format!("{name}.bias"), b));
            }
        }
        fn ln<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, name: &str, p: &'a LayerNormParams<T>) {
            out.push((format!("{name}.gain"), &p.gain));
            out.push((format!("{name}.shift"), &p.shift));
        }
        lin(&mut out, "embed", &self.embed);
        out.push((String::from("token"), &self.token));
        out.push((String::from("pos"), &self.pos));
        for (l, b) in self.blocks.iter().enumerate() {
            ln(&mut out, &format!("blocks.{l}.ln1"), &b.ln1);
            lin(&mut out, &format!("blocks.{l}.wq"), &b.wq);
            lin(&mut out, &format!("blocks.{l}.wk"), &b.wk);
            lin(&mut out, &format!("blocks.{l}.wv"), &b.wv);
            lin(&mut out, &format!("blocks.{l}.wo"), &b.wo);
            ln(&mut out, &format!("blocks.{l}.ln2"), &b.ln2);
            lin(&mut out, &format!("blocks.{l}.ffn1"), &b.ffn1);
            lin(&mut out, &format!("blocks.{l}.ffn2"), &b.ffn2);
        }
        ln(&mut out, "final_ln", &self.final_ln);
        lin(&mut out, "head", &self.head);
        if let Some(m) = &self.mpp {
            lin(&mut out, "mpp.decoder", &m.decoder);
            out.push((String::from("mpp.mask_token"), &m.mask_token));
        }
        if let Some(dc) = &self.deconfounder {
            lin(&mut out, "deconfounder.fc", &dc.fc);
        }
        out
    }

    /// Mutable view in the same order as [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        fn lin<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, name: &str, p: &'a mut LinearParams<T>) {
            out.push((format!("{name}.weight"), &mut p.weight));
            if let Some(b) = p.bias.as_mut() {
                out.push((format!("{name}.bias"), b));
            }
        }
        fn ln<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, name: &str, p: &'a mut LayerNormParams<T>) {
            out.push((format!("{name}.gain"), &mut p.gain));
            out.push((format!("{name}.shift"), &mut p.shift));
        }
        lin(&mut out, "embed", &mut self.embed);
        out.push((String::from("token"), &mut self.token));
        out.push((String::from("pos"), &mut self.pos));
        for (l, b) in self.blocks.iter_mut().enumerate() {
            ln(&mut out, &format!("blocks.{l}.ln1"), &mut b.ln1);
            lin(&mut out, &format!("blocks.{l}.wq"), &mut b.wq);
            lin(&mut out, &format!("blocks.{l}.wk"), &mut b.wk);
            lin(&mut out, &format!("blocks.{l}.wv"), &mut b.wv);
            lin(&mut out, &format!("blocks.{l}.wo"), &mut b.wo);
            ln(&mut out, &format!("blocks.{l}.ln2"), &mut b.ln2);
            lin(&mut out, &format!("blocks.{l}.ffn1"), &mut b.ffn1);
            lin(&mut out, &format!("blocks.{l}.ffn2"), &mut b.ffn2);
        }
        ln(&mut out, "final_ln", &mut self.final_ln);
        lin(&mut out, "head", &mut self.head);
        if let Some(m) = self.mpp.as_mut() {
            lin(&mut out, "mpp.decoder", &mut m.decoder);
            out.push((String::from("mpp.mask_token"), &mut m.mask_token));
        }
        if let Some(dc) = self.deconfounder.as_mut() {
            lin(&mut out, "deconfounder.fc", &mut dc.fc);
        }
        out
    }

    /// Non-learnable state saved alongside the parameters.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.deconfounder.iter().map(|dc| (String::from("deconfounder.running"), &dc.running)).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.deconfounder.iter_mut().map(|dc| (String::from("deconfounder.running"), &mut dc.running)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Add `scale · other` to every parameter.
    pub fn axpy_params(&mut self, scale: T, other: &SiTModel<T>) {
        for ((_, p), (_, o)) in self.params_mut().into_iter().zip(other.params()) {
            crate::tensor::axpy(scale, o.data(), p.data_mut());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.is_finite())
    }

    /// Copy with every tensor converted to another precision.
    pub fn cast<U: Scalar>(&self) -> SiTModel<U> {
        let lin = |p: &LinearParams<T>| LinearParams { weight: p.weight.cast(), bias: p.bias.as_ref().map(Tensor::cast) };
        let ln = |p: &LayerNormParams<T>| LayerNormParams { gain: p.gain.cast(), shift: p.shift.cast() };
        SiTModel {
            config: self.config.clone(),
            embed: lin(&self.embed),
            token: self.token.cast(),
            pos: self.pos.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: ln(&b.ln1),
                    wq: lin(&b.wq),
                    wk: lin(&b.wk),
                    wv: lin(&b.wv),
                    wo: lin(&b.wo),
                    ln2: ln(&b.ln2),
                    ffn1: lin(&b.ffn1),
                    ffn2: lin(&b.ffn2),
                })
                .collect(),
            final_ln: ln(&self.final_ln),
            head: lin(&self.head),
            mpp: self.mpp.as_ref().map(|m| MppHead { decoder: lin(&m.decoder), mask_token: m.mask_token.cast() }),
            deconfounder: self.deconfounder.as_ref().map(|d| Deconfounder { fc: lin(&d.fc), running: d.running.cast() }),
        }
    }

    /// Fresh prediction head, keeping encoder and embeddings (warm start
    /// from pretraining).
    pub fn reset_head(&mut self, rng: &mut RngState) {
        self.head = LinearParams::new(self.config.head.outputs(), self.config.dim, true, rng);
        self.final_ln = LayerNormParams::new(self.config.dim);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;

    fn toy() -> SiTConfig {
        SiTConfig {
            layers: 2,
            heads: 2,
            dim: 8,
            mlp_dim: 32,
            num_patches: 6,
            vertices_per_patch: 4,
            channels: 2,
            dropout_embed: 0.0,
            dropout_attn: 0.0,
            dropout_ffn: 0.0,
            head: HeadKind::Classification(3),
            mpp_head: true,
            deconfounder: true,
            layer_norm_eps: 1e-6,
        }
    }

    #[test]
    fn instantiated_count_matches_config() {
        let mut rng = RngState::new(0);
        for cfg in [toy(), SiTConfig { mpp_head: false, deconfounder: false, ..toy() }] {
            let m = SiTModel::<f32>::new(cfg.clone(), &mut rng).unwrap();
            assert_eq!(m.parameter_count(), cfg.parameter_count());
        }
    }

    #[test]
    fn names_unique_and_aligned() {
        let mut m = SiTModel::<f64>::new(toy(), &mut RngState::new(1)).unwrap();
        let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let names_mut: Vec<String> = m.params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
    }

    #[test]
    fn zeros_like_is_zero() {
        let m = SiTModel::<f32>::new(toy(), &mut RngState::new(2)).unwrap();
        let z = m.zeros_like();
        assert!(z.params().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn batch_statistics() {
        let mut m = SiTModel::<f64>::new(toy(), &mut RngState::new(3)).unwrap();
        let dc = m.deconfounder.as_mut().unwrap();
        assert!(dc.normalize(40.0).is_err());
        let z = dc.normalize_batch(&[40.0, 40.0, 40.0]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(dc.is_initialized());
    }
}
