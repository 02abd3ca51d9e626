//! Deviation loss under a Gaussian score prior, and its aggregation over
//! base models.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Label, Sample};
use crate::diffnet::{PointLoss, Reduction, ScorerNet};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PriorMode {
    /// μ_r = 0, σ_r = 1 exactly.
    Analytic,
    /// μ_r, σ_r estimated once from `draws` standard-normal samples.
    Sampled { draws: usize, seed: u64 },
}

/// Reference score distribution plus the anomaly margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationPrior {
    pub mu: f64,
    pub sigma: f64,
    pub margin: f64,
    pub mode: PriorMode,
}

impl DeviationPrior {
    pub fn analytic(margin: f64) -> Result<Self> {
        Self::new(PriorMode::Analytic, margin)
    }

    pub fn new(mode: PriorMode, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::config("loss.margin", "must be finite and > 0"));
        }
        let (mu, sigma) = match mode {
            PriorMode::Analytic => (0.0, 1.0),
            PriorMode::Sampled { draws, seed } => {
                if draws < 2 {
                    return Err(Error::config("loss.prior.draws", "need at least 2 draws"));
                }
                let mut r = rng::derived_rng(seed, "prior", 0);
                let xs: Vec<f64> = (0..draws).map(|_| StandardNormal.sample(&mut r)).collect();
                let mean = xs.iter().sum::<f64>() / draws as f64;
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (draws - 1) as f64;
                (mean, var.sqrt())
            }
        };
        Ok(Self {
            mu,
            sigma,
            margin,
            mode,
        })
    }
}

pub fn deviation(score: f64, prior: &DeviationPrior) -> f64 {
    (score - prior.mu) / prior.sigma
}

/// `|dev|` for normals, `max(0, m − dev)` for anomalies.
pub fn deviation_loss(score: f64, label: Label, prior: &DeviationPrior) -> f64 {
    let dev = deviation(score, prior);
    match label {
        Label::Normal => dev.abs(),
        Label::Anomaly => (prior.margin - dev).max(0.0),
    }
}

impl PointLoss for DeviationPrior {
    /// At the kinks (dev = 0 for normals, dev = m for anomalies) the slope
    /// is the zero subgradient.
    fn value_and_slope(&self, score: f64, label: Label) -> (f64, f64) {
        let dev = deviation(score, self);
        match label {
            Label::Normal => {
                let slope = if dev > 0.0 {
                    1.0
                } else if dev < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (dev.abs(), slope / self.sigma)
            }
            Label::Anomaly => {
                if dev < self.margin {
                    (self.margin - dev, -1.0 / self.sigma)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

/// Reduced deviation loss of `net` over a support set.
pub fn base_loss(net: &ScorerNet, support: &[&Sample], prior: &DeviationPrior, reduction: Reduction) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::Contract("base loss over an empty support set".into()));
    }
    net.loss(support, prior, reduction)
}

/// Aggregated query loss over base models with its per-base gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CdlLoss {
    pub total: f64,
    /// Unweighted query loss of each base.
    pub per_base: Vec<f64>,
    /// `∂total/∂θ_i`, already multiplied by `w_i`.
    pub grads: Vec<Vec<f64>>,
}

pub fn validate_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count {
        return Err(Error::Contract(format!("{} weights for {count} bases", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Contract(format!("negative or non-finite weight in {weights:?}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// `Σ_i w_i · L_i` where `L_i` is base `i`'s reduced loss on its query set.
/// Without weights every `w_i` is 1, the unweighted aggregate.
pub fn cdl_loss(
    bases: &[(&ScorerNet, &[&Sample])],
    weights: Option<&[f64]>,
    prior: &DeviationPrior,
    reduction: Reduction,
) -> Result<CdlLoss> {
    if let Some(w) = weights {
        validate_weights(w, bases.len())?;
    }
    let mut out = CdlLoss {
        total: 0.0,
        per_base: Vec::with_capacity(bases.len()),
        grads: Vec::with_capacity(bases.len()),
    };
    for (i, (net, query)) in bases.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let (loss, mut grad) = net.loss_and_grad(query, prior, reduction)?;
        if w != 1.0 {
            grad.iter_mut().for_each(|g| *g *= w);
        }
        out.total += w * loss;
        out.per_base.push(loss);
        out.grads.push(grad);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> DeviationPrior {
        DeviationPrior::analytic(5.0).unwrap()
    }

    fn sample(id: &str, x: Vec<f64>, label: Label) -> Sample {
        Sample::new(id, x, label, None).unwrap()
    }

    #[test]
    fn deviation_values() {
        assert_eq!(deviation(0.0, &prior()), 0.0);
        let p = DeviationPrior {
            mu: 1.0,
            sigma: 2.0,
            margin: 5.0,
            mode: PriorMode::Analytic,
        };
        assert_eq!(deviation(3.0, &p), 1.0);
    }

    #[test]
    fn sampled_prior_is_close_to_standard() {
        let p = DeviationPrior::new(PriorMode::Sampled { draws: 5000, seed: 17 }, 5.0).unwrap();
        assert!(p.mu.abs() < 0.05, "{}", p.mu);
        assert!((p.sigma - 1.0).abs() < 0.05, "{}", p.sigma);
        assert_eq!(p, DeviationPrior::new(PriorMode::Sampled { draws: 5000, seed: 17 }, 5.0).unwrap());
    }

    #[test]
    fn loss_values() {
        let p = prior();
        assert_eq!(deviation_loss(0.0, Label::Normal, &p), 0.0);
        assert_eq!(deviation_loss(6.0, Label::Anomaly, &p), 0.0);
        assert_eq!(deviation_loss(2.0, Label::Anomaly, &p), 3.0);
        assert_eq!(deviation_loss(-1.5, Label::Normal, &p), 1.5);
    }

    #[test]
    fn invalid_prior() {
        assert!(DeviationPrior::analytic(0.0).is_err());
        assert!(DeviationPrior::new(PriorMode::Sampled { draws: 1, seed: 0 }, 5.0).is_err());
    }

    #[test]
    fn base_loss_reductions() {
        // Zero net scores 0: normal costs 0, anomaly costs m.
        let net = ScorerNet::zeros(1, 2);
        let n = sample("n", vec![1.0], Label::Normal);
        assert_eq!(base_loss(&net, &[&n], &prior(), Reduction::Mean).unwrap(), 0.0);
        // Scores 1 and 3 via a bias-only net: normal at 1 → 1, anomaly at
        // score 3 with m=6 → 3; mean 2.
        let net = ScorerNet::from_params(1, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p6 = DeviationPrior::analytic(6.0).unwrap();
        let a = sample("a", vec![3.0], Label::Anomaly);
        let n1 = sample("n1", vec![1.0], Label::Normal);
        assert_eq!(base_loss(&net, &[&n1, &a], &p6, Reduction::Mean).unwrap(), 2.0);
        assert_eq!(base_loss(&net, &[&n1, &a], &p6, Reduction::Sum).unwrap(), 4.0);
        assert!(base_loss(&net, &[], &p6, Reduction::Mean).is_err());
        let n2 = sample("n2", vec![3.0], Label::Normal);
        // Normals cost 1 and 3, the anomaly 3: (2 + 3) / 2.
        assert_eq!(base_loss(&net, &[&n1, &n2, &a], &p6, Reduction::Balanced).unwrap(), 2.5);
        assert_eq!(base_loss(&net, &[&n1, &n2], &p6, Reduction::Balanced).unwrap(), 2.0);
    }

    #[test]
    fn cdl_two_bases_weighted() {
        let net = ScorerNet::from_params(1, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let q1 = [sample("x", vec![2.0], Label::Normal)];
        let q2 = [sample("y", vec![4.0], Label::Normal)];
        let r1: Vec<&Sample> = q1.iter().collect();
        let r2: Vec<&Sample> = q2.iter().collect();
        let bases = [(&net, r1.as_slice()), (&net, r2.as_slice())];
        let out = cdl_loss(&bases, Some(&[0.5, 0.5]), &prior(), Reduction::Mean).unwrap();
        assert_eq!(out.per_base, vec![2.0, 4.0]);
        assert_eq!(out.total, 3.0);
        let unweighted = cdl_loss(&bases, None, &prior(), Reduction::Mean).unwrap();
        assert_eq!(unweighted.total, 6.0);
        assert!(cdl_loss(&bases, Some(&[0.7, 0.7]), &prior(), Reduction::Mean).is_err());
        assert!(cdl_loss(&bases, Some(&[1.0]), &prior(), Reduction::Mean).is_err());
        assert!(cdl_loss(&bases, Some(&[1.5, -0.5]), &prior(), Reduction::Mean).is_err());
    }
}
