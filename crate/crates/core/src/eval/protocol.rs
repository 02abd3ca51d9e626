use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, FeatureDataset, Label, Sample, SplitSpec};
use crate::diffnet::Optimizer;
use crate::error::{Error, Result};
use crate::rng;
use crate::train::{balanced_batches, TrainConfig};

use super::auc::auc_of;
use super::variants::{Model, TrainRequest, Trained, Variant};

/// The repository's fixed evaluation seeds.
pub const BENCHMARK_SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Fraction of normals kept for training; the rest are tested.
const TRAIN_NORMAL_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Training anomalies drawn from every class.
    General,
    /// Training anomalies drawn from `seen_class` only.
    Hard,
    /// Train on a source domain, fine-tune on target normals, test on target.
    CrossDomain,
}

fn default_seeds() -> Vec<u64> {
    BENCHMARK_SEEDS.to_vec()
}
fn default_fine_tune() -> usize {
    10
}
fn default_shift() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Labeled anomalies available for training.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default)]
    pub seen_class: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_fine_tune")]
    pub fine_tune_epochs: usize,
    /// Feature offset of a generated cross-domain target.
    #[serde(default = "default_shift")]
    pub target_shift: f64,
}

impl ProtocolSpec {
    pub fn general(m: usize) -> Self {
        Self {
            kind: ProtocolKind::General,
            m,
            seen_class: None,
            seeds: default_seeds(),
            fine_tune_epochs: default_fine_tune(),
            target_shift: default_shift(),
        }
    }

    pub fn hard(m: usize, seen_class: &str) -> Self {
        Self {
            kind: ProtocolKind::Hard,
            seen_class: Some(seen_class.to_string()),
            ..Self::general(m)
        }
    }

    pub fn cross_domain(m: usize) -> Self {
        Self {
            kind: ProtocolKind::CrossDomain,
            ..Self::general(m)
        }
    }

    pub fn with_seeds(mut self, seeds: &[u64]) -> Self {
        self.seeds = seeds.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("protocol.M", "must be at least 1"));
        }
        if self.kind == ProtocolKind::Hard && self.seen_class.is_none() {
            return Err(Error::config("protocol.seen_class", "required for the hard setting"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("protocol.seeds", "need at least one seed"));
        }
        if !self.target_shift.is_finite() {
            return Err(Error::config("protocol.target_shift", "must be finite"));
        }
        Ok(())
    }

    /// Checks the spec against the anomaly classes of `ds`.
    pub fn validate_for(&self, ds: &FeatureDataset) -> Result<()> {
        self.validate()?;
        let candidates = self.candidates(ds);
        if let Some(class) = &self.seen_class {
            if candidates.is_empty() {
                return Err(Error::config("protocol.seen_class", format!("no anomalies of class {class:?}")));
            }
        }
        if candidates.len() < self.m {
            return Err(Error::config(
                "protocol.M",
                format!("{} training anomalies requested, {} available", self.m, candidates.len()),
            ));
        }
        Ok(())
    }

    fn candidates(&self, ds: &FeatureDataset) -> Vec<usize> {
        ds.anomaly_indices()
            .into_iter()
            .filter(|&j| match &self.seen_class {
                Some(c) => ds.get(j).class_tag.as_deref() == Some(c.as_str()),
                None => true,
            })
            .collect()
    }
}

fn class_of(s: &Sample) -> String {
    s.class_tag.clone().unwrap_or_default()
}

/// Training and test sets for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSplit {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub seen_classes: BTreeSet<String>,
}

fn split_normals(ds: &FeatureDataset, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    let normals = ds.filter(|s| s.label == Label::Normal);
    let spec = SplitSpec::new(
        rng::derive(seed, "split", 0),
        vec![TRAIN_NORMAL_FRACTION, 1.0 - TRAIN_NORMAL_FRACTION],
    )?;
    let mut parts = stratified_split(&normals, &spec)?.into_iter();
    Ok((parts.next().expect("two parts"), parts.next().expect("two parts")))
}

/// A 3:1 normal split plus `M` training anomalies; every other anomaly, of
/// every class, goes to the test set.
pub fn split_for_seed(ds: &FeatureDataset, spec: &ProtocolSpec, seed: u64) -> Result<ProtocolSplit> {
    spec.validate_for(ds)?;
    let (train_normals, test_normals) = split_normals(ds, seed)?;
    let mut candidates = spec.candidates(ds);
    candidates.shuffle(&mut rng::derived_rng(seed, "anomalies", 0));
    let chosen: BTreeSet<usize> = candidates[..spec.m].iter().copied().collect();
    let mut chosen_sorted: Vec<usize> = chosen.iter().copied().collect();
    chosen_sorted.sort_unstable();
    let train_anomalies = ds.subset(&chosen_sorted);
    let rest: Vec<usize> = ds.anomaly_indices().into_iter().filter(|j| !chosen.contains(j)).collect();
    let seen_classes = match &spec.seen_class {
        Some(c) => BTreeSet::from([c.clone()]),
        None => train_anomalies.samples().iter().map(class_of).collect(),
    };
    Ok(ProtocolSplit {
        train: train_normals.concat(&train_anomalies)?,
        test: test_normals.concat(&ds.subset(&rest))?,
        seen_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub auc_overall: f64,
    pub auc_seen: Option<f64>,
    /// All unseen-class anomalies pooled against the normals.
    pub auc_unseen: Option<f64>,
    /// Mean of the per-class unseen AUCs.
    pub auc_unseen_per_class: Option<f64>,
    pub per_class: BTreeMap<String, f64>,
    pub test_normals: usize,
    pub test_anomalies: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub variant: String,
    pub setting: ProtocolKind,
    #[serde(rename = "M")]
    pub m: usize,
    pub seen_class: Option<String>,
    pub seeds: Vec<SeedResult>,
    pub auc_overall: Summary,
    pub auc_seen: Option<Summary>,
    pub auc_unseen: Option<Summary>,
    pub auc_unseen_per_class: Option<Summary>,
}

impl EvalResult {
    fn aggregate(variant: &str, spec: &ProtocolSpec, mut seeds: Vec<SeedResult>) -> Self {
        seeds.sort_by_key(|s| s.seed);
        let collect = |f: fn(&SeedResult) -> Option<f64>| Summary::of(&seeds.iter().filter_map(f).collect::<Vec<_>>());
        Self {
            variant: variant.to_string(),
            setting: spec.kind,
            m: spec.m,
            seen_class: spec.seen_class.clone(),
            auc_overall: collect(|s| Some(s.auc_overall)).expect("at least one seed"),
            auc_seen: collect(|s| s.auc_seen),
            auc_unseen: collect(|s| s.auc_unseen),
            auc_unseen_per_class: collect(|s| s.auc_unseen_per_class),
            seeds,
        }
    }
}

/// Scores `test` with `model` and splits anomalies into seen and unseen
/// classes.
pub fn evaluate(model: &Model, test: &FeatureDataset, seen: &BTreeSet<String>, seed: u64) -> Result<SeedResult> {
    let mut normal = Vec::new();
    let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in test.samples() {
        let score = model.score(&s.feature);
        if !score.is_finite() {
            return Err(Error::Numeric {
                sample: s.id.clone(),
                what: format!("test score {score}"),
            });
        }
        match s.label {
            Label::Normal => normal.push(score),
            Label::Anomaly => by_class.entry(class_of(s)).or_default().push(score),
        }
    }
    let pooled = |keep: &dyn Fn(&str) -> bool| -> Vec<f64> {
        by_class.iter().filter(|(c, _)| keep(c)).flat_map(|(_, v)| v.iter().copied()).collect()
    };
    let all = pooled(&|_| true);
    let seen_scores = pooled(&|c| seen.contains(c));
    let unseen_scores = pooled(&|c| !seen.contains(c));
    let per_class = by_class
        .iter()
        .map(|(c, v)| Ok((c.clone(), auc_of(&normal, v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let unseen_each: Vec<f64> = per_class.iter().filter(|(c, _)| !seen.contains(*c)).map(|(_, &a)| a).collect();
    let maybe = |v: &[f64]| if v.is_empty() { Ok(None) } else { auc_of(&normal, v).map(Some) };
    Ok(SeedResult {
        seed,
        auc_overall: auc_of(&normal, &all)?,
        auc_seen: maybe(&seen_scores)?,
        auc_unseen: maybe(&unseen_scores)?,
        auc_unseen_per_class: Summary::of(&unseen_each).map(|s| s.mean),
        per_class,
        test_normals: normal.len(),
        test_anomalies: all.len(),
    })
}

/// Fails if any test id reached a training structure.
pub fn audit_leakage<'a>(test: &FeatureDataset, training_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let test_ids: BTreeSet<&str> = test.ids().collect();
    let leaked: Vec<&str> = training_ids.into_iter().filter(|id| test_ids.contains(id)).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(format!("{} test ids in training structures, e.g. {:?}", leaked.len(), &leaked[..leaked.len().min(5)])))
    }
}

pub struct SeedRun {
    pub seed: u64,
    pub trained: Trained,
    pub result: SeedResult,
}

pub struct ProtocolRun {
    pub result: EvalResult,
    /// Per-seed artifacts in ascending seed order.
    pub runs: Vec<SeedRun>,
}

fn finish(variant: &dyn Variant, spec: &ProtocolSpec, mut runs: Vec<SeedRun>) -> ProtocolRun {
    runs.sort_by_key(|r| r.seed);
    let result = EvalResult::aggregate(variant.name(), spec, runs.iter().map(|r| r.result.clone()).collect());
    ProtocolRun { result, runs }
}

/// Fits `variant` once per seed and evaluates on that seed's held-out data.
pub fn run_protocol(
    ds: &FeatureDataset,
    spec: &ProtocolSpec,
    cfg: &TrainConfig,
    variant: &dyn Variant,
    snapshot_every: Option<usize>,
) -> Result<ProtocolRun> {
    if spec.kind == ProtocolKind::CrossDomain {
        return Err(Error::config("protocol.kind", "cross_domain needs a target dataset"));
    }
    spec.validate_for(ds)?;
    cfg.validate()?;
    let runs = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let split = split_for_seed(ds, spec, seed)?;
            let trained = variant.train(&TrainRequest {
                train: &split.train,
                cfg,
                seed: rng::derive(seed, "train", 0),
                snapshot_every,
            })?;
            audit_leakage(&split.test, split.train.ids().chain(trained.structure_ids.iter().map(String::as_str)))?;
            let result = evaluate(&trained.model, &split.test, &split.seen_classes, seed)?;
            Ok(SeedRun { seed, trained, result })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(variant, spec, runs))
}

/// Normals-only deviation-loss epochs on every net of `model`, each with a
/// fresh optimizer at the base learning rate.
pub fn fine_tune(model: &mut Model, normals: &FeatureDataset, epochs: usize, cfg: &TrainConfig, seed: u64) -> Result<()> {
    if epochs == 0 {
        return Ok(());
    }
    let prior = cfg.prior()?;
    let idx = normals.normal_indices();
    if idx.is_empty() {
        return Err(Error::Validation("fine-tuning needs at least one normal sample".into()));
    }
    let steps = idx.len().div_ceil(cfg.batch_size);
    for (i, net) in model.nets_mut().iter_mut().enumerate() {
        let mut opt = Optimizer::adam(cfg.lr_base, net.params().len());
        let net_seed = rng::derive(seed, "fine-tune", i as u64);
        for epoch in 0..epochs {
            let mut r = rng::derived_rng(net_seed, "epoch", epoch as u64);
            for batch in balanced_batches(&idx, &[], cfg.batch_size, steps, &mut r) {
                let samples: Vec<&Sample> = batch.iter().map(|&j| normals.get(j)).collect();
                let (_, grad) = net.loss_and_grad(&samples, &prior, cfg.reduction)?;
                opt.step(net.params_mut(), &grad)?;
            }
        }
    }
    Ok(())
}

/// Trains on `source`, fine-tunes on the training normals of `target`,
/// and tests on the rest of `target`.
pub fn run_cross_domain(
    source: &FeatureDataset,
    target: &FeatureDataset,
    spec: &ProtocolSpec,
    cfg: &TrainConfig,
    variant: &dyn Variant,
) -> Result<ProtocolRun> {
    if source.dim() != target.dim() {
        return Err(Error::Shape {
            expected: source.dim(),
            got: target.dim(),
        });
    }
    spec.validate_for(source)?;
    cfg.validate()?;
    let runs = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let split = split_for_seed(source, spec, seed)?;
            let mut trained = variant.train(&TrainRequest {
                train: &split.train,
                cfg,
                seed: rng::derive(seed, "train", 0),
                snapshot_every: None,
            })?;
            let (target_normals, target_test_normals) = split_normals(target, seed)?;
            let source_train: BTreeSet<&str> = split.train.ids().collect();
            let target_anomalies = target.filter(|s| s.label == Label::Anomaly && !source_train.contains(s.id.as_str()));
            let test = target_test_normals.concat(&target_anomalies)?;
            fine_tune(&mut trained.model, &target_normals, spec.fine_tune_epochs, cfg, rng::derive(seed, "train", 1))?;
            audit_leakage(
                &test,
                split
                    .train
                    .ids()
                    .chain(target_normals.ids())
                    .chain(trained.structure_ids.iter().map(String::as_str)),
            )?;
            let result = evaluate(&trained.model, &test, &split.seen_classes, seed)?;
            Ok(SeedRun { seed, trained, result })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(variant, spec, runs))
}
