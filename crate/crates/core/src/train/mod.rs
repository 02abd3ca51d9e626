//! Collaborative training of the unified scorer from base models trained on
//! the simulated anomaly distributions.

mod batches;
mod cdl;
mod history;
mod importance;

use serde::{Deserialize, Serialize};

use crate::diffnet::Reduction;
use crate::error::{Error, Result};
use crate::hadg::{HadgConfig, KMeansConfig};
use crate::losses::{DeviationPrior, PriorMode};

pub use batches::balanced_batches;
pub use cdl::{
    broadcast, fit, fit_with, train_bases_epoch, train_ensemble, unified_update, BaseEpoch, EpochRecord, FitOutput,
    UnifiedStep,
};
pub use history::ScoreHistory;
pub use importance::{
    accuracy_weights, generalization_errors, softmax_neg, AccuracyImportance, EpochContext, ImportanceEstimator,
    ImportanceState, SequenceImportance,
};

fn default_t() -> usize {
    7
}
fn default_c() -> usize {
    3
}
fn default_k() -> usize {
    5
}
fn default_epochs() -> usize {
    30
}
fn default_warmup() -> usize {
    5
}
fn default_lr_base() -> f64 {
    0.0002
}
fn default_lr_unified() -> f64 {
    0.005
}
fn default_lr_psi() -> f64 {
    0.02
}
fn default_batch() -> usize {
    32
}
fn default_hidden() -> usize {
    64
}
fn default_c_unseen() -> f64 {
    1.0
}
fn default_c_other() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    5.0
}
fn default_prior() -> PriorMode {
    PriorMode::Analytic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of simulated distributions and base models.
    #[serde(rename = "T", default = "default_t")]
    pub t: usize,
    /// Number of normal clusters.
    #[serde(rename = "C", default = "default_c")]
    pub c: usize,
    /// Score-history length fed to the sequence predictor.
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Epochs with uniform importance before the predictor is consulted.
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_lr_base")]
    pub lr_base: f64,
    #[serde(default = "default_lr_unified")]
    pub lr_unified: f64,
    #[serde(default = "default_lr_psi")]
    pub lr_psi: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Hidden width of the scorer.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_c_unseen")]
    pub c_unseen: f64,
    #[serde(default = "default_c_other")]
    pub c_other: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_prior")]
    pub prior: PriorMode,
    #[serde(default)]
    pub reduction: Reduction,
    /// Plain gradient descent for the unified model instead of Adam.
    #[serde(default)]
    pub plain_sgd: bool,
    #[serde(default)]
    pub hadg: HadgConfig,
    #[serde(default)]
    pub kmeans: KMeansConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t: default_t(),
            c: default_c(),
            k: default_k(),
            epochs: default_epochs(),
            warmup_epochs: default_warmup(),
            lr_base: default_lr_base(),
            lr_unified: default_lr_unified(),
            lr_psi: default_lr_psi(),
            batch_size: default_batch(),
            hidden: default_hidden(),
            c_unseen: default_c_unseen(),
            c_other: default_c_other(),
            margin: default_margin(),
            prior: default_prior(),
            reduction: Reduction::Balanced,
            plain_sgd: false,
            hadg: HadgConfig::default(),
            kmeans: KMeansConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Checks every field; errors name the offending key under `train.`.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("train.{field}"), msg));
        if self.t == 0 {
            return bad("T", "must be at least 1");
        }
        if self.c == 0 {
            return bad("C", "must be at least 1");
        }
        if self.t > 1 && self.c < 2 {
            return bad("C", "need at least 2 clusters when T > 1");
        }
        if self.k == 0 {
            return bad("K", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.warmup_epochs == 0 {
            return bad("warmup_epochs", "must be at least 1");
        }
        if self.k > self.warmup_epochs {
            return bad("K", "must not exceed warmup_epochs so the history fills before first use");
        }
        for (name, lr) in [("lr_base", self.lr_base), ("lr_unified", self.lr_unified), ("lr_psi", self.lr_psi)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(name, "learning rates must be finite and > 0");
            }
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1");
        }
        if !(self.c_unseen >= 0.0 && self.c_other >= 0.0) {
            return bad("c_unseen", "category weights must be >= 0");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin", "must be finite and > 0");
        }
        if let PriorMode::Sampled { draws, .. } = self.prior {
            if draws < 2 {
                return bad("prior.draws", "need at least 2 draws");
            }
        }
        if self.kmeans.max_iters == 0 || !(self.kmeans.tol > 0.0) || self.kmeans.n_init == 0 {
            return bad("kmeans", "max_iters and n_init must be >= 1 and tol > 0");
        }
        let p = &self.hadg.pseudo;
        if !(0.0..=1.0).contains(&p.lambda_min) || !(p.lambda_min..=1.0).contains(&p.lambda_max) {
            return bad("hadg.pseudo.lambda_min", "need 0 <= lambda_min <= lambda_max <= 1");
        }
        if !(p.rho > 0.0 && p.rho <= 1.0) || !(p.sigma > 0.0) {
            return bad("hadg.pseudo.rho", "need 0 < rho <= 1 and sigma > 0");
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<DeviationPrior> {
        DeviationPrior::new(self.prior, self.margin)
    }

    /// Sweeping `K` raises the warmup so the history can fill.
    pub fn with_history(mut self, k: usize) -> Self {
        self.k = k;
        self.warmup_epochs = self.warmup_epochs.max(k);
        self
    }
}
