use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::diffnet::{ScorerNet, SequencePredictorNet};
use crate::error::{Error, Result};
use crate::hadg::{build_distributions, build_random_subsets, kmeans, AnomalyMode, DistributionSet};
use crate::rng;
use crate::train::{
    fit_with, train_ensemble, AccuracyImportance, EpochRecord, ImportanceEstimator, SequenceImportance, TrainConfig,
};

/// A trained detector: the unified model alone, or the mean of several.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Unified(ScorerNet),
    Ensemble(Vec<ScorerNet>),
}

impl Model {
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::Unified(g) => g.score(x),
            Model::Ensemble(nets) => nets.iter().map(|n| n.score(x)).sum::<f64>() / nets.len() as f64,
        }
    }

    pub fn nets(&self) -> &[ScorerNet] {
        match self {
            Model::Unified(g) => std::slice::from_ref(g),
            Model::Ensemble(nets) => nets,
        }
    }

    pub fn nets_mut(&mut self) -> &mut [ScorerNet] {
        match self {
            Model::Unified(g) => std::slice::from_mut(g),
            Model::Ensemble(nets) => nets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "epochs", rename_all = "snake_case")]
pub enum TrainingLog {
    Collaborative(Vec<EpochRecord>),
    /// Per-epoch support loss of each independently trained base.
    Ensemble(Vec<Vec<f64>>),
}

impl TrainingLog {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        match self {
            TrainingLog::Collaborative(records) => {
                for r in records {
                    out.push_str(&serde_json::to_string(r)?);
                    out.push('\n');
                }
            }
            TrainingLog::Ensemble(losses) => {
                for (epoch, l) in losses.iter().enumerate() {
                    let line = serde_json::json!({ "epoch": epoch, "support_loss": l });
                    out.push_str(&serde_json::to_string(&line)?);
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }
}

pub struct Trained {
    pub model: Model,
    pub log: TrainingLog,
    /// Ids present in any support, query, or score-history structure.
    pub structure_ids: BTreeSet<String>,
    pub predictor: Option<SequencePredictorNet>,
    /// Unified model after selected epochs, for periodic checkpoints.
    pub snapshots: Vec<(usize, ScorerNet)>,
}

/// How a variant is asked to train.
pub struct TrainRequest<'a> {
    pub train: &'a FeatureDataset,
    pub cfg: &'a TrainConfig,
    pub seed: u64,
    /// Keep the unified model every this many epochs (collaborative variants).
    pub snapshot_every: Option<usize>,
}

pub trait Variant: Send + Sync {
    fn name(&self) -> &'static str;

    fn train(&self, req: &TrainRequest<'_>) -> Result<Trained>;
}

fn ids_of(set: &DistributionSet) -> BTreeSet<String> {
    set.used_indices().into_iter().map(|j| set.pool.get(j).id.clone()).collect()
}

fn collaborative(req: &TrainRequest<'_>, estimator: &mut dyn ImportanceEstimator) -> Result<Trained> {
    let mut snapshots = Vec::new();
    let every = req.snapshot_every.filter(|&n| n > 0);
    let out = fit_with(req.train, req.cfg, req.seed, estimator, &mut |rec, g| {
        if every.is_some_and(|n| (rec.epoch + 1) % n == 0) {
            snapshots.push((rec.epoch, g.clone()));
        }
        Ok(())
    })?;
    let mut structure_ids = ids_of(&out.distributions);
    structure_ids.extend(out.history_ids);
    Ok(Trained {
        model: Model::Unified(out.unified),
        log: TrainingLog::Collaborative(out.log),
        structure_ids,
        predictor: estimator.predictor().cloned(),
        snapshots,
    })
}

fn ensemble(req: &TrainRequest<'_>, set: &DistributionSet) -> Result<Trained> {
    let supports: Vec<Vec<usize>> = set.subsets.iter().map(|s| s.support.clone()).collect();
    let (nets, losses) = train_ensemble(&set.pool, &supports, req.cfg, req.seed)?;
    Ok(Trained {
        model: Model::Ensemble(nets),
        log: TrainingLog::Ensemble(losses),
        structure_ids: ids_of(set),
        predictor: None,
        snapshots: Vec::new(),
    })
}

/// Full-data ensemble of `t` bases sharing every training sample.
fn full_data(req: &TrainRequest<'_>, t: usize) -> Result<Trained> {
    let all: Vec<usize> = (0..req.train.len()).collect();
    let (nets, losses) = train_ensemble(req.train, &vec![all; t], req.cfg, req.seed)?;
    Ok(Trained {
        model: Model::Ensemble(nets),
        log: TrainingLog::Ensemble(losses),
        structure_ids: req.train.ids().map(String::from).collect(),
        predictor: None,
        snapshots: Vec::new(),
    })
}

/// The clustered subsets exactly as the collaborative variants build them.
pub fn hadg_subsets(train: &FeatureDataset, cfg: &TrainConfig, seed: u64) -> Result<DistributionSet> {
    let clusters = kmeans(train, cfg.c, rng::derive(seed, "kmeans", 0), cfg.kmeans)?;
    let mode = AnomalyMode::for_count(train.count(crate::data::Label::Anomaly));
    build_distributions(train, &clusters, cfg.t, mode, &cfg.hadg, rng::derive(seed, "hadg", 0))
}

pub struct Ahl;
pub struct CdlMinus;
pub struct HadgOnly;
pub struct RamHadg;
pub struct RamFull;
pub struct Homogeneous;

impl Variant for Ahl {
    fn name(&self) -> &'static str {
        "AHL"
    }

    fn train(&self, req: &TrainRequest<'_>) -> Result<Trained> {
        collaborative(req, &mut SequenceImportance::new())
    }
}

impl Variant for CdlMinus {
    fn name(&self) -> &'static str {
        "CDL_minus"
    }

    fn train(&self, req: &TrainRequest<'_>) -> Result<Trained> {
        collaborative(req, &mut AccuracyImportance)
    }
}

impl Variant for HadgOnly {
    fn name(&self) -> &'static str {
        "HADG_only"
    }

    fn train(&self, req: &TrainRequest<'_>) -> Result<Trained> {
        req.cfg.validate()?;
        ensemble(req, &hadg_subsets(req.train, req.cfg, req.seed)?)
    }
}

impl Variant for RamHadg {
    fn name(&self) -> &'static str {
        "RamHADG"
    }

    fn train(&self, req: &TrainRequest<'_>) -> Result<Trained> {
        req.cfg.validate()?;
        let set = build_random_subsets(req.train, req.cfg.t, &req.cfg.hadg, rng::derive(req.seed, "hadg", 0))?;
        ensemble(req, &set)
    }
}

impl Variant for RamFull {
    fn name(&self) -> &'static str {
        "RamFULL"
    }

    fn train(&self, req: &TrainRequest<'_>) -> Result<Trained> {
        req.cfg.validate()?;
        full_data(req, req.cfg.t)
    }
}

impl Variant for Homogeneous {
    fn name(&self) -> &'static str {
        "Homogeneous"
    }

    fn train(&self, req: &TrainRequest<'_>) -> Result<Trained> {
        req.cfg.validate()?;
        full_data(req, 1)
    }
}

/// Variants selectable by name.
#[derive(Default)]
pub struct VariantRegistry {
    entries: BTreeMap<&'static str, Box<dyn Variant>>,
}

impl VariantRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(Box::new(Ahl));
        r.register(Box::new(HadgOnly));
        r.register(Box::new(RamHadg));
        r.register(Box::new(RamFull));
        r.register(Box::new(CdlMinus));
        r.register(Box::new(Homogeneous));
        r
    }

    pub fn register(&mut self, v: Box<dyn Variant>) {
        self.entries.insert(v.name(), v);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Variant> {
        self.entries.get(name).map(|v| v.as_ref()).ok_or_else(|| {
            Error::config(
                "variants",
                format!("unknown variant {name:?}; known: {}", self.names().collect::<Vec<_>>().join(", ")),
            )
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}
