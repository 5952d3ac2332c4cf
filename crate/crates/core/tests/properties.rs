use nalgebra::DMatrix;
use proptest::prelude::*;

use sit_core::attention::{rollout, rollout_matrix, HeadMode};
use sit_core::model::{Corruption, MppPlan};
use sit_core::nn::{linear_backward, linear_forward, softmax_rows, LinearParams};
use sit_core::resample::{apply_resample, rotation_table, Axis, FeatureField};
use sit_core::mesh::build_icosphere;
use sit_core::model::AttentionStack;
use sit_core::{RngState, Tensor};

fn to_na(t: &Tensor<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn stochastic(s: usize, rng: &mut RngState) -> Tensor<f64> {
    let logits = Tensor::matrix(s, s, (0..s * s).map(|_| 3.0 * rng.normal()).collect()).unwrap();
    softmax_rows(&logits)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_matches_dense_algebra(seed in any::<u64>(), rows in 1usize..6, inp in 1usize..7, out in 1usize..5) {
        let mut rng = RngState::new(seed);
        let x = Tensor::matrix(rows, inp, (0..rows * inp).map(|_| rng.normal()).collect()).unwrap();
        let p = LinearParams::<f64>::new(out, inp, true, &mut rng);
        let dy = Tensor::matrix(rows, out, (0..rows * out).map(|_| rng.normal()).collect()).unwrap();
        let w = to_na(&p.weight);
        let b = p.bias.as_ref().unwrap().data();
        let want = to_na(&x) * w.transpose();
        let got = to_na(&linear_forward(&x, &p).unwrap());
        for r in 0..rows {
            for c in 0..out {
                prop_assert!((got[(r, c)] - want[(r, c)] - b[c]).abs() < 1e-12);
            }
        }
        let g = linear_backward(&x, &p, &dy).unwrap();
        prop_assert!((to_na(&g.dx) - to_na(&dy) * &w).amax() < 1e-12);
        prop_assert!((to_na(&g.dweight) - to_na(&dy).transpose() * to_na(&x)).amax() < 1e-12);
    }

    #[test]
    fn rollout_is_a_product_of_normalized_layers(seed in any::<u64>(), n in 1usize..9, l in 1usize..4, h in 1usize..4) {
        let mut rng = RngState::new(seed);
        let layers: Vec<Vec<Tensor<f64>>> = (0..l).map(|_| (0..h).map(|_| stochastic(n + 1, &mut rng)).collect()).collect();
        let stack = AttentionStack { layers: layers.clone() };
        let mut want = DMatrix::<f64>::identity(n + 1, n + 1);
        for layer in &layers {
            let mut a = layer.iter().map(to_na).fold(DMatrix::zeros(n + 1, n + 1), |acc, m| acc + m) / h as f64;
            a += DMatrix::identity(n + 1, n + 1);
            for mut row in a.row_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            want = a * want;
        }
        let got = to_na(&rollout_matrix(&stack, HeadMode::Averaged, 0..l).unwrap());
        prop_assert!((got - &want).amax() < 1e-12);
        let scores = rollout(&stack, HeadMode::Averaged).unwrap().patch_scores;
        prop_assert!(scores.iter().all(|&s| s >= 0.0));
        prop_assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mpp_plan_masks_the_requested_share(seed in any::<u64>(), n in 1usize..400, ratio in 0.05f64..1.0) {
        let plan = MppPlan::draw(n, ratio, &mut RngState::new(seed)).unwrap();
        let expected = ((ratio * n as f64).round() as usize).clamp(1, n);
        prop_assert_eq!(plan.masked_count(), expected);
        prop_assert_eq!(plan.mask().iter().filter(|&&m| m).count(), expected);
        for (i, a) in plan.actions().iter().enumerate() {
            prop_assert_eq!(plan.mask()[i], *a != Corruption::Untouched);
            if let Corruption::Swap(j) = a {
                prop_assert!(*j < n);
            }
        }
    }

    #[test]
    fn rotation_preserves_constants(deg in -45.0f64..45.0, axis in 0usize..3, c in -10.0f32..10.0) {
        let ico = build_icosphere(2).unwrap();
        let table = rotation_table(&ico, Axis::ALL[axis], deg).unwrap();
        let field = FeatureField::new(ico.mesh().id(), vec!["c".into()], vec![c; ico.mesh().vertex_count()]).unwrap();
        let out = apply_resample(&field, &table).unwrap();
        prop_assert!(out.values().iter().all(|&v| v == c));
    }
}
