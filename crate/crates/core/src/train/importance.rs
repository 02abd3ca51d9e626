use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::diffnet::{Optimizer, SequencePredictorNet};
use crate::error::{Error, Result};
use crate::hadg::DistributionSet;
use crate::rng;

use super::{ScoreHistory, TrainConfig};

/// What an importance estimator sees after the bases finish an epoch.
pub struct EpochContext<'a> {
    pub epoch: usize,
    pub dist: &'a DistributionSet,
    /// Pool indices of every sample in some support or query set, ascending.
    pub used: &'a [usize],
    /// `scores[j][i]`: base `i` on `used[j]`, after this epoch's base training.
    pub scores: &'a [Vec<f64>],
    pub cfg: &'a TrainConfig,
    pub seed: u64,
}

impl EpochContext<'_> {
    pub fn width(&self) -> usize {
        self.dist.subsets.len()
    }

    fn warming_up(&self) -> bool {
        self.epoch < self.cfg.warmup_epochs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceState {
    /// Estimated generalization error per base, absent during warmup.
    pub r: Option<Vec<f64>>,
    pub w: Vec<f64>,
    /// Mean predictor loss over this epoch's training pass.
    pub psi_loss: Option<f64>,
}

impl ImportanceState {
    pub fn uniform(t: usize) -> Self {
        Self {
            r: None,
            w: vec![1.0 / t as f64; t],
            psi_loss: None,
        }
    }
}

/// Produces per-base importance weights once per epoch.
pub trait ImportanceEstimator: Send {
    fn name(&self) -> &'static str;

    fn estimate(&mut self, ctx: &EpochContext<'_>) -> Result<ImportanceState>;

    fn predictor(&self) -> Option<&SequencePredictorNet> {
        None
    }
}

/// `softmax(−r)`, shifted by `min r` so the exponentials cannot overflow.
pub fn softmax_neg(r: &[f64]) -> Vec<f64> {
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = r.iter().map(|&x| (lo - x).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Category-weighted squared error of the predicted scores for each base,
/// averaged over every used sample outside that base's support normals.
/// Anomalies its support never contained weigh `c_unseen`; all else `c_other`.
pub fn generalization_errors(
    predictions: &[Vec<f64>],
    used: &[usize],
    dist: &DistributionSet,
    c_unseen: f64,
    c_other: f64,
) -> Result<Vec<f64>> {
    dist.subsets
        .iter()
        .map(|sub| {
            let normals: BTreeSet<usize> = sub.support_normals.iter().copied().collect();
            let support: BTreeSet<usize> = sub.support.iter().copied().collect();
            let mut total = 0.0;
            let mut n = 0usize;
            for (pred, &j) in predictions.iter().zip(used) {
                if normals.contains(&j) {
                    continue;
                }
                let label = dist.pool.get(j).label;
                let c = if label == Label::Anomaly && !support.contains(&j) {
                    c_unseen
                } else {
                    c_other
                };
                let e = pred[sub.index] - label.target();
                total += c * e * e;
                n += 1;
            }
            if n == 0 {
                return Err(Error::Contract(format!("subset {}: no samples outside its support normals", sub.index)));
            }
            Ok(total / n as f64)
        })
        .collect()
}

/// Weights proportional to each base's thresholded accuracy on the used
/// samples outside its support. Uniform if every accuracy is zero.
pub fn accuracy_weights(scores: &[Vec<f64>], used: &[usize], dist: &DistributionSet, threshold: f64) -> Vec<f64> {
    let t = dist.subsets.len();
    let acc: Vec<f64> = dist
        .subsets
        .iter()
        .map(|sub| {
            let support: BTreeSet<usize> = sub.support.iter().copied().collect();
            let (mut hit, mut n) = (0usize, 0usize);
            for (s, &j) in scores.iter().zip(used) {
                if support.contains(&j) {
                    continue;
                }
                let flagged = s[sub.index] >= threshold;
                hit += usize::from(flagged == dist.pool.get(j).label.is_anomaly());
                n += 1;
            }
            if n == 0 {
                0.0
            } else {
                hit as f64 / n as f64
            }
        })
        .collect();
    let z: f64 = acc.iter().sum();
    if z > 0.0 {
        acc.into_iter().map(|a| a / z).collect()
    } else {
        vec![1.0 / t as f64; t]
    }
}

struct PredictorState {
    net: SequencePredictorNet,
    opt: Optimizer,
    history: ScoreHistory,
}

/// Learns to forecast each sample's next base-score vector from its last
/// `K` and turns the forecast error into weights.
#[derive(Default)]
pub struct SequenceImportance {
    state: Option<PredictorState>,
}

impl SequenceImportance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self) -> Option<&ScoreHistory> {
        self.state.as_ref().map(|s| &s.history)
    }

    /// One shuffled minibatch pass of the predictor over the used samples.
    fn train_pass(st: &mut PredictorState, ctx: &EpochContext<'_>) -> Result<f64> {
        let mut order: Vec<usize> = (0..ctx.used.len()).collect();
        order.shuffle(&mut rng::derived_rng(ctx.seed, "psi-batches", ctx.epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(ctx.cfg.batch_size) {
            let mut grad = vec![0.0; st.net.params().len()];
            let scale = 1.0 / chunk.len() as f64;
            for &j in chunk {
                total += st.net.accumulate_mse_grad(&st.history.window(j), &ctx.scores[j], scale, &mut grad)?;
            }
            st.opt.step(st.net.params_mut(), &grad)?;
        }
        Ok(total / order.len() as f64)
    }
}

impl ImportanceEstimator for SequenceImportance {
    fn name(&self) -> &'static str {
        "sequence"
    }

    fn estimate(&mut self, ctx: &EpochContext<'_>) -> Result<ImportanceState> {
        let st = self.state.get_or_insert_with(|| {
            let net = SequencePredictorNet::init(ctx.width(), rng::derive(ctx.seed, "psi-init", 0));
            let opt = Optimizer::adam(ctx.cfg.lr_psi, net.params().len());
            PredictorState {
                net,
                opt,
                history: ScoreHistory::new(ctx.used.len(), ctx.cfg.k, ctx.width()),
            }
        });
        let out = if ctx.warming_up() {
            ImportanceState::uniform(ctx.width())
        } else {
            if !st.history.is_full() {
                return Err(Error::Contract(format!(
                    "score history holds {} of {} epochs at epoch {}",
                    st.history.len(),
                    st.history.capacity(),
                    ctx.epoch
                )));
            }
            let psi_loss = Self::train_pass(st, ctx)?;
            let predictions = (0..ctx.used.len())
                .map(|j| st.net.predict(&st.history.window(j)))
                .collect::<Result<Vec<_>>>()?;
            let r = generalization_errors(&predictions, ctx.used, ctx.dist, ctx.cfg.c_unseen, ctx.cfg.c_other)?;
            ImportanceState {
                w: softmax_neg(&r),
                r: Some(r),
                psi_loss: Some(psi_loss),
            }
        };
        st.history.push(ctx.epoch, ctx.scores);
        Ok(out)
    }

    fn predictor(&self) -> Option<&SequencePredictorNet> {
        self.state.as_ref().map(|s| &s.net)
    }
}

/// Weights from each base's current accuracy at threshold `margin / 2`.
#[derive(Debug, Default)]
pub struct AccuracyImportance;

impl ImportanceEstimator for AccuracyImportance {
    fn name(&self) -> &'static str {
        "accuracy"
    }

    fn estimate(&mut self, ctx: &EpochContext<'_>) -> Result<ImportanceState> {
        if ctx.warming_up() {
            return Ok(ImportanceState::uniform(ctx.width()));
        }
        Ok(ImportanceState {
            r: None,
            w: accuracy_weights(ctx.scores, ctx.used, ctx.dist, ctx.cfg.margin / 2.0),
            psi_loss: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_known_errors() {
        let w = softmax_neg(&[0.0, 2f64.ln()]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
        let eq = softmax_neg(&[0.4; 4]);
        assert!(eq.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_survives_huge_errors() {
        let w = softmax_neg(&[1e6, 1e6 + 1.0, 2e6]);
        assert!(w.iter().all(|x| x.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[1] && w[2] == 0.0);
    }
}
