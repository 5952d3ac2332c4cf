use alloc::vec::Vec;

use super::{example_rng, Dataset, Executor, Target};
use crate::error::{bail, Result};
use crate::model::{forward_with_cache, Confound, HeadKind, SiTModel};
use crate::Scalar;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        bail!(Argument, "metric over no values");
    }
    if a.len() != b.len() {
        bail!(Shape, "{} predictions for {} targets", a.len(), b.len());
    }
    Ok(())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation. NaN (with a warning) when either side has zero
/// variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        log::warn!("Pearson correlation undefined for constant input");
        return Ok(f64::NAN);
    }
    Ok(sab / libm::sqrt(saa * sbb))
}

/// Area under the ROC curve via the Mann-Whitney rank statistic with tied
/// scores sharing their mean rank.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        bail!(Shape, "{} scores for {} labels", scores.len(), positive.len());
    }
    let np = positive.iter().filter(|p| **p).count();
    let nn = positive.len() - np;
    if np == 0 || nn == 0 {
        bail!(Argument, "AUC needs both classes ({} positive, {} negative)", np, nn);
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Argument, "AUC over NaN scores");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (np as f64, nn as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Evaluation-mode head outputs for every example.
pub fn predict<T: Scalar, E: Executor>(model: &SiTModel<T>, data: &Dataset, exec: &E) -> Result<Vec<Vec<f64>>> {
    exec.run(data.len(), |i| {
        let e = &data.examples[i];
        let confound = match (&model.deconfounder, e.confound) {
            (Some(_), Some(c)) => Confound::Raw(c),
            (Some(_), None) => bail!(Validation, "example {} has no confound", i),
            (None, _) => Confound::None,
        };
        let seq = data.sequence(i)?.to_tensor::<T>();
        let (pred, _) = forward_with_cache(model, &seq, &confound, &mut example_rng(0, 0, i), false)?;
        Ok(pred.iter().map(|p| p.as_f64()).collect())
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub pearson: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

impl Metrics {
    /// `(name, value)` pairs of the metrics that apply, in a fixed order.
    pub fn records(&self) -> Vec<(&'static str, f64)> {
        [("mse", self.mse), ("mae", self.mae), ("pearson", self.pearson), ("accuracy", self.accuracy), ("auc", self.auc)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect()
    }
}

/// Regression heads report MSE, MAE and Pearson r; classification heads
/// report accuracy and, for two classes, AUC of the class-1 probability.
pub fn evaluate<T: Scalar, E: Executor>(model: &SiTModel<T>, data: &Dataset, exec: &E) -> Result<Metrics> {
    if data.is_empty() {
        bail!(Argument, "cannot evaluate on an empty dataset");
    }
    let preds = predict(model, data, exec)?;
    let mut m = Metrics { count: data.len(), ..Metrics::default() };
    match model.config.head {
        HeadKind::Regression => {
            let p: Vec<f64> = preds.iter().map(|p| p[0]).collect();
            let t: Vec<f64> = data.examples.iter().map(|e| e.target.value()).collect();
            m.mse = Some(mse(&p, &t)?);
            m.mae = Some(mae(&p, &t)?);
            m.pearson = Some(pearson(&p, &t)?);
        }
        HeadKind::Classification(k) => {
            let mut labels = Vec::with_capacity(data.len());
            for (i, e) in data.examples.iter().enumerate() {
                match e.target {
                    Target::Class(c) if c < k => labels.push(c),
                    t => bail!(Validation, "example {} has target {:?} for a {}-class head", i, t, k),
                }
            }
            let argmax = |p: &[f64]| (0..p.len()).fold(0, |b, j| if p[j] > p[b] { j } else { b });
            let hits = preds.iter().zip(&labels).filter(|(p, &c)| argmax(p) == c).count();
            m.accuracy = Some(hits as f64 / data.len() as f64);
            if k == 2 {
                let scores: Vec<f64> = preds.iter().map(|p| 1.0 / (1.0 + libm::exp(p[0] - p[1]))).collect();
                let pos: Vec<bool> = labels.iter().map(|&c| c == 1).collect();
                m.auc = match auc(&scores, &pos) {
                    Ok(a) => Some(a),
                    Err(e) => {
                        log::warn!("AUC skipped: {}", e);
                        None
                    }
                };
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn perfect_predictions() {
        let t = [1.0, 2.0, 4.0];
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert!((pearson(&t, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_predictions_have_no_correlation() {
        assert!(pearson(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().is_nan());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(auc(&[0.5, 0.6], &[true, true]).is_err());
        let mut rng = RngState::new(8);
        let scores: Vec<f64> = (0..2000).map(|_| rng.uniform()).collect();
        let labels: Vec<bool> = (0..2000).map(|_| rng.uniform() < 0.5).collect();
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 0.03);
    }
}
