//! Central-difference checks of every hand-written backward pass.

use alloc::vec::Vec;

use super::*;
use crate::rng::RngState;
use crate::tensor::Tensor;

const H: f64 = 1e-6;

fn toy(head: HeadKind, mpp: bool, deconf: bool) -> SiTConfig {
    SiTConfig {
        layers: 2,
        heads: 2,
        dim: 8,
        mlp_dim: 16,
        num_patches: 6,
        vertices_per_patch: 4,
        channels: 2,
        dropout_embed: 0.0,
        dropout_attn: 0.0,
        dropout_ffn: 0.0,
        head,
        mpp_head: mpp,
        deconfounder: deconf,
        layer_norm_eps: 1e-6,
    }
}

/// Scale parameters up from the 0.02 init so the check exercises
/// non-trivial attention patterns.
fn spread(model: &mut SiTModel<f64>, rng: &mut RngState) {
    for (name, p) in model.params_mut() {
        if name.ends_with("gain") {
            continue;
        }
        for x in p.data_mut() {
            *x = rng.normal() * 0.5;
        }
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut RngState) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn check(model: &SiTModel<f64>, analytic: &SiTModel<f64>, loss: impl Fn(&SiTModel<f64>) -> f64) {
    let mut worst = 0.0f64;
    let names: Vec<_> = model.params().into_iter().map(|(n, t)| (n, t.len())).collect();
    for (pi, (name, len)) in names.iter().enumerate() {
        for j in 0..*len {
            let mut plus = model.clone();
            plus.params_mut()[pi].1.data_mut()[j] += H;
            let mut minus = model.clone();
            minus.params_mut()[pi].1.data_mut()[j] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let a = analytic.params()[pi].1.data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4);
            assert!(rel < 1e-5, "{}[{}]: analytic {} numeric {}", name, j, a, numeric);
            worst = worst.max(rel);
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn full_model_regression() {
    let mut rng = RngState::new(11);
    let mut model = SiTModel::<f64>::new(toy(HeadKind::Regression, false, false), &mut rng).unwrap();
    spread(&mut model, &mut rng);
    let seq = random_tensor(6, 8, &mut rng);
    let mut grads = model.zeros_like();
    let (pred, cache) = forward_with_cache(&model, &seq, &Confound::None, &mut rng, false).unwrap();
    backward(&model, &cache, &[2.0 * pred[0]], &mut grads).unwrap();
    check(&model, &grads, |m| {
        let (p, _) = forward_with_cache(m, &seq, &Confound::None, &mut RngState::new(0), false).unwrap();
        p[0] * p[0]
    });
}

#[test]
fn classification_with_confound() {
    let mut rng = RngState::new(12);
    let mut model = SiTModel::<f64>::new(toy(HeadKind::Classification(3), false, true), &mut rng).unwrap();
    spread(&mut model, &mut rng);
    let seq = random_tensor(6, 8, &mut rng);
    let weights = [0.3, -1.2, 0.7];
    let z = Confound::Normalized(0.8);
    let mut grads = model.zeros_like();
    let (_, cache) = forward_with_cache(&model, &seq, &z, &mut rng, false).unwrap();
    backward(&model, &cache, &weights, &mut grads).unwrap();
    check(&model, &grads, |m| {
        let (p, _) = forward_with_cache(m, &seq, &z, &mut RngState::new(0), false).unwrap();
        p.iter().zip(&weights).map(|(a, b)| a * b).sum()
    });
}

#[test]
fn masked_patch_prediction() {
    let mut rng = RngState::new(13);
    let mut model = SiTModel::<f64>::new(toy(HeadKind::Regression, true, false), &mut rng).unwrap();
    spread(&mut model, &mut rng);
    let seq = random_tensor(6, 8, &mut rng);
    let plan = MppPlan::from_actions(alloc::vec![
        Corruption::MaskToken,
        Corruption::Untouched,
        Corruption::Swap(3),
        Corruption::Keep,
        Corruption::Untouched,
        Corruption::MaskToken,
    ]);
    let mut grads = model.zeros_like();
    mpp_step(&model, &seq, plan.clone(), &mut rng, false, Some(&mut grads)).unwrap();
    check(&model, &grads, |m| mpp_step(m, &seq, plan.clone(), &mut RngState::new(0), false, None).unwrap());
}

#[test]
fn attention_block_alone() {
    let mut rng = RngState::new(14);
    let mut model = SiTModel::<f64>::new(toy(HeadKind::Regression, false, false), &mut rng).unwrap();
    spread(&mut model, &mut rng);
    let x = random_tensor(3, 8, &mut rng);
    let c = random_tensor(3, 8, &mut rng);
    let block = &model.blocks[0];
    let (_, cache) = mhsa_forward(block, &x, 2, 0.0, 1e-6, &mut rng, false).unwrap();
    let mut g = model.zeros_like();
    let dx = mhsa_backward(block, &cache, &c, &mut g.blocks[0]).unwrap();
    let f = |x: &Tensor<f64>| {
        let (z, _) = mhsa_forward(block, x, 2, 0.0, 1e-6, &mut RngState::new(0), false).unwrap();
        z.data().iter().zip(c.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    for j in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[j] += H;
        let mut m = x.clone();
        m.data_mut()[j] -= H;
        let numeric = (f(&p) - f(&m)) / (2.0 * H);
        assert!((dx.data()[j] - numeric).abs() < 1e-6 * (1.0 + numeric.abs()), "x[{}]", j);
    }
}

#[test]
fn dropout_paths_use_the_recorded_masks() {
    let mut rng = RngState::new(15);
    let mut cfg = toy(HeadKind::Regression, false, false);
    cfg.dropout_embed = 0.2;
    cfg.dropout_attn = 0.2;
    cfg.dropout_ffn = 0.2;
    let mut model = SiTModel::<f64>::new(cfg, &mut rng).unwrap();
    spread(&mut model, &mut rng);
    let seq = random_tensor(6, 8, &mut rng);
    let mut grads = model.zeros_like();
    let (_, cache) = forward_with_cache(&model, &seq, &Confound::None, &mut RngState::new(99), true).unwrap();
    backward(&model, &cache, &[1.0], &mut grads).unwrap();
    // Same seed, same masks: the perturbed passes see identical dropout.
    check(&model, &grads, |m| {
        let (p, _) = forward_with_cache(m, &seq, &Confound::None, &mut RngState::new(99), true).unwrap();
        p[0]
    });
}
