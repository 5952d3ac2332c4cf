//! Attention rollout and projection of patch saliency onto the mesh.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{bail, Result};
use crate::model::AttentionStack;
use crate::patching::PatchTable;
use crate::resample::FeatureField;
use crate::tensor::Tensor;

pub const STOCHASTIC_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Averaged,
    Head(usize),
}

impl HeadMode {
    pub fn label(self) -> String {
        match self {
            HeadMode::Averaged => String::from("average"),
            HeadMode::Head(h) => format!("head{}", h),
        }
    }
}

/// Normalized token-to-patch saliency with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub patch_scores: Vec<f64>,
    pub head: HeadMode,
    pub layers: Range<usize>,
    /// The token attended only to itself; scores fell back to uniform.
    pub degenerate: bool,
}

fn validate(stack: &AttentionStack) -> Result<usize> {
    let s = stack.seq_len();
    if stack.layer_count() == 0 || stack.head_count() == 0 {
        bail!(Shape, "empty attention stack");
    }
    if s < 2 {
        bail!(Shape, "attention over {} tokens has no patches", s);
    }
    for (l, layer) in stack.layers.iter().enumerate() {
        if layer.len() != stack.head_count() {
            bail!(Shape, "layer {} has {} heads, expected {}", l, layer.len(), stack.head_count());
        }
        for (h, a) in layer.iter().enumerate() {
            if a.rows() != s || a.cols() != s {
                bail!(Shape, "A[{}][{}] is {}×{}, expected {}×{}", l, h, a.rows(), a.cols(), s, s);
            }
            for r in 0..s {
                let row = a.row(r);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE
                    || row.iter().any(|&x| !x.is_finite() || x < -STOCHASTIC_TOLERANCE)
                {
                    bail!(Validation, "A[{}][{}] row {} is not stochastic (sum {})", l, h, r, sum);
                }
            }
        }
    }
    Ok(s)
}

/// `row-normalize(A + I)` for the selected head (or the head mean).
fn residual_adjusted(layer: &[Tensor<f64>], mode: HeadMode) -> Result<Tensor<f64>> {
    let mut a = match mode {
        HeadMode::Head(h) => match layer.get(h) {
            Some(a) => a.clone(),
            None => bail!(Argument, "head {} out of range ({} heads)", h, layer.len()),
        },
        HeadMode::Averaged => {
            let mut m = layer[0].zeros_like();
            for a in layer {
                m.add_assign(a)?;
            }
            m.scale(1.0 / layer.len() as f64);
            m
        }
    };
    for r in 0..a.rows() {
        let v = a.get(r, r);
        a.set(r, r, v + 1.0);
        let row = a.row_mut(r);
        let inv = 1.0 / row.iter().sum::<f64>();
        row.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(a)
}

/// Rolled-out matrix `R = Ã⁽ᵉ⁻¹⁾ ··· Ã⁽ˢ⁾` over `layers = s..e`.
pub fn rollout_matrix(stack: &AttentionStack, mode: HeadMode, layers: Range<usize>) -> Result<Tensor<f64>> {
    let s = validate(stack)?;
    if layers.start >= layers.end || layers.end > stack.layer_count() {
        bail!(Argument, "layer range {:?} invalid for {} layers", layers, stack.layer_count());
    }
    let mut r = Tensor::<f64>::zeros(&[s, s]);
    for i in 0..s {
        r.set(i, i, 1.0);
    }
    for l in layers {
        let a = residual_adjusted(&stack.layers[l], mode)?;
        let mut next = Tensor::zeros(&[s, s]);
        crate::tensor::matmul_nn_acc(a.data(), r.data(), s, s, s, next.data_mut());
        r = next;
    }
    Ok(r)
}

/// Rollout over every layer.
pub fn rollout(stack: &AttentionStack, mode: HeadMode) -> Result<AttentionMap> {
    rollout_layers(stack, mode, 0..stack.layer_count())
}

pub fn rollout_layers(stack: &AttentionStack, mode: HeadMode, layers: Range<usize>) -> Result<AttentionMap> {
    let r = rollout_matrix(stack, mode, layers.clone())?;
    let mut scores = r.row(0)[1..].to_vec();
    let total: f64 = scores.iter().sum();
    let degenerate = !(total > 1e-12);
    if degenerate {
        log::warn!("attention rollout is degenerate (token attends only to itself); using uniform scores");
        let n = scores.len();
        scores.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    } else {
        scores.iter_mut().for_each(|x| *x /= total);
    }
    Ok(AttentionMap { patch_scores: scores, head: mode, layers, degenerate })
}

/// Per-vertex mean of the scores of every patch containing the vertex,
/// before normalization. Linear in `scores`.
pub fn upsample_scores(scores: &[f64], table: &PatchTable) -> Result<Vec<f64>> {
    if scores.len() != table.patch_count() {
        bail!(Shape, "{} scores for {} patches", scores.len(), table.patch_count());
    }
    let nv = table.carrier_vertex_count();
    let mut sum = vec![0.0; nv];
    let mut count = vec![0usize; nv];
    let mut seen = Vec::new();
    for (p, row) in table.rows().enumerate() {
        seen.clear();
        seen.extend_from_slice(row);
        seen.sort_unstable();
        seen.dedup();
        for &v in &seen {
            sum[v] += scores[p];
            count[v] += 1;
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect())
}

/// One-channel field on the patch table's carrier mesh, max-normalized to
/// [0, 1].
pub fn upsample_map(map: &AttentionMap, table: &PatchTable) -> Result<FeatureField> {
    let mut values = upsample_scores(&map.patch_scores, table)?;
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    FeatureField::new(table.carrier(), vec![map.head.label()], values.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_icosphere;
    use crate::patching::build_ico_patch_table;
    use crate::rng::RngState;

    fn stochastic(s: usize, rng: &mut RngState) -> Tensor<f64> {
        let mut a = Tensor::zeros(&[s, s]);
        for r in 0..s {
            let row = a.row_mut(r);
            row.iter_mut().for_each(|x| *x = rng.uniform() + 0.01);
            let t: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= t);
        }
        a
    }

    #[test]
    fn uniform_attention() {
        let s = 5;
        let a = Tensor::full(&[s, s], 1.0 / s as f64);
        let stack = AttentionStack { layers: vec![vec![a]] };
        let m = rollout(&stack, HeadMode::Averaged).unwrap();
        assert!(!m.degenerate);
        for x in &m.patch_scores {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_is_degenerate() {
        let mut a = Tensor::zeros(&[4, 4]);
        (0..4).for_each(|i| a.set(i, i, 1.0));
        let stack = AttentionStack { layers: vec![vec![a.clone()], vec![a]] };
        let m = rollout(&stack, HeadMode::Head(0)).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.patch_scores, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn rollout_is_stochastic() {
        let mut rng = RngState::new(4);
        let stack = AttentionStack {
            layers: (0..3).map(|_| (0..2).map(|_| stochastic(6, &mut rng)).collect()).collect(),
        };
        for mode in [HeadMode::Averaged, HeadMode::Head(1)] {
            let r = rollout_matrix(&stack, mode, 0..3).unwrap();
            for i in 0..6 {
                assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_head_modes_agree() {
        let mut rng = RngState::new(5);
        let stack = AttentionStack { layers: (0..2).map(|_| vec![stochastic(5, &mut rng)]).collect() };
        let a = rollout(&stack, HeadMode::Averaged).unwrap();
        let b = rollout(&stack, HeadMode::Head(0)).unwrap();
        for (x, y) in a.patch_scores.iter().zip(&b.patch_scores) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_stochastic() {
        let stack = AttentionStack { layers: vec![vec![Tensor::full(&[3, 3], 0.5)]] };
        assert!(rollout(&stack, HeadMode::Averaged).is_err());
    }

    #[test]
    fn upsample_locality_and_constant() {
        let fine = build_icosphere(3).unwrap();
        let coarse = build_icosphere(1).unwrap();
        let table = build_ico_patch_table(&fine, &coarse).unwrap();
        let n = table.patch_count();
        let uniform = AttentionMap {
            patch_scores: vec![1.0 / n as f64; n],
            head: HeadMode::Averaged,
            layers: 0..1,
            degenerate: false,
        };
        let f = upsample_map(&uniform, &table).unwrap();
        assert!(f.values().iter().all(|&v| (v - 1.0).abs() < 1e-6));

        let mut one_hot = uniform.clone();
        one_hot.patch_scores = vec![0.0; n];
        one_hot.patch_scores[7] = 1.0;
        let f = upsample_map(&one_hot, &table).unwrap();
        let members: Vec<usize> = table.row(7).to_vec();
        for v in 0..f.vertex_count() {
            let x = f.get(v, 0);
            if members.contains(&v) {
                assert!(x > 0.0 && x <= 1.0);
            } else {
                assert_eq!(x, 0.0);
            }
        }
        assert!(members.iter().any(|&v| f.get(v, 0) < 1.0));
    }

    #[test]
    fn score_length_checked() {
        let fine = build_icosphere(2).unwrap();
        let coarse = build_icosphere(0).unwrap();
        let table = build_ico_patch_table(&fine, &coarse).unwrap();
        assert!(upsample_scores(&[1.0; 3], &table).is_err());
    }
}
