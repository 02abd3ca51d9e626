use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, Label, Sample};
use crate::diffnet::{Optimizer, ScorerNet};
use crate::error::{Error, Result};
use crate::hadg::{build_distributions, kmeans, AnomalyMode, ClusterAssignment, DistributionSet};
use crate::losses::{base_loss, validate_weights, DeviationPrior};
use crate::rng;

use super::{balanced_batches, EpochContext, ImportanceEstimator, SequenceImportance, TrainConfig};

/// Outcome of one epoch of base training.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEpoch {
    /// Loss of each base over its whole support after the epoch.
    pub support_loss: Vec<f64>,
    /// `scores[j][i]` for each requested pool index `j`, if any were requested.
    pub scores: Option<Vec<Vec<f64>>>,
}

/// Trains every base for one epoch on balanced minibatches of its support
/// (pool indices), then optionally scores `score_on` with every base.
#[allow(clippy::too_many_arguments)]
pub fn train_bases_epoch(
    bases: &mut [ScorerNet],
    opts: &mut [Optimizer],
    pool: &FeatureDataset,
    supports: &[Vec<usize>],
    cfg: &TrainConfig,
    prior: &DeviationPrior,
    epoch: usize,
    seed: u64,
    score_on: Option<&[usize]>,
) -> Result<BaseEpoch> {
    if bases.len() != opts.len() || bases.len() != supports.len() {
        return Err(Error::Contract(format!(
            "{} bases, {} optimizers, {} supports",
            bases.len(),
            opts.len(),
            supports.len()
        )));
    }
    if let Some(i) = supports.iter().position(Vec::is_empty) {
        return Err(Error::config("hadg", format!("support set of base {i} is empty")));
    }
    let support_loss = bases
        .par_iter_mut()
        .zip(opts.par_iter_mut())
        .zip(supports.par_iter())
        .enumerate()
        .map(|(i, ((net, opt), support))| {
            let (anomalies, normals): (Vec<usize>, Vec<usize>) =
                support.iter().partition(|&&j| pool.get(j).label == Label::Anomaly);
            let steps = support.len().div_ceil(cfg.batch_size);
            let mut r = rng::derived_rng(rng::derive(seed, "base-batches", i as u64), "epoch", epoch as u64);
            for batch in balanced_batches(&normals, &anomalies, cfg.batch_size, steps, &mut r) {
                let samples: Vec<&Sample> = batch.iter().map(|&j| pool.get(j)).collect();
                let (_, grad) = net.loss_and_grad(&samples, prior, cfg.reduction)?;
                opt.step(net.params_mut(), &grad)?;
            }
            let all: Vec<&Sample> = support.iter().map(|&j| pool.get(j)).collect();
            base_loss(net, &all, prior, cfg.reduction)
        })
        .collect::<Result<Vec<f64>>>()?;
    let scores = score_on.map(|idx| score_matrix(bases, pool, idx));
    Ok(BaseEpoch { support_loss, scores })
}

fn score_matrix(bases: &[ScorerNet], pool: &FeatureDataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.par_iter()
        .map(|&j| bases.iter().map(|b| b.score(&pool.get(j).feature)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedStep {
    /// `Σ w_i · L_i^q` at the base parameters, before the step.
    pub total: f64,
    pub query_loss: Vec<f64>,
}

/// One optimizer step of the unified model along `Σ w_i ∇L_i^q(θ_i)`.
pub fn unified_update(
    unified: &mut ScorerNet,
    opt: &mut Optimizer,
    bases: &[ScorerNet],
    dist: &DistributionSet,
    weights: &[f64],
    prior: &DeviationPrior,
    cfg: &TrainConfig,
) -> Result<UnifiedStep> {
    validate_weights(weights, bases.len())?;
    if bases.len() != dist.subsets.len() {
        return Err(Error::Contract(format!("{} bases for {} subsets", bases.len(), dist.subsets.len())));
    }
    if let Some(b) = bases.iter().find(|b| !b.same_architecture(unified)) {
        return Err(Error::Shape {
            expected: unified.params().len(),
            got: b.params().len(),
        });
    }
    let parts = bases
        .par_iter()
        .zip(dist.subsets.par_iter())
        .map(|(net, sub)| net.loss_and_grad(&sub.query_samples(&dist.pool), prior, cfg.reduction))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut direction: Option<Vec<f64>> = None;
    let mut query_loss = Vec::with_capacity(parts.len());
    for ((loss, mut grad), &w) in parts.into_iter().zip(weights) {
        total += w * loss;
        query_loss.push(loss);
        if w != 1.0 {
            grad.iter_mut().for_each(|g| *g *= w);
        }
        match direction.as_mut() {
            None => direction = Some(grad),
            Some(d) => d.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
        }
    }
    let direction = direction.ok_or_else(|| Error::Contract("no base models".into()))?;
    opt.step(unified.params_mut(), &direction)?;
    Ok(UnifiedStep { total, query_loss })
}

/// Copies the unified parameters into every base.
pub fn broadcast(unified: &ScorerNet, bases: &mut [ScorerNet]) -> Result<()> {
    for b in bases.iter_mut() {
        if !b.same_architecture(unified) {
            return Err(Error::Shape {
                expected: unified.params().len(),
                got: b.params().len(),
            });
        }
        b.params_mut().copy_from_slice(unified.params());
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub support_loss: Vec<f64>,
    pub query_loss: Vec<f64>,
    pub r: Option<Vec<f64>>,
    pub w: Vec<f64>,
    pub psi_loss: Option<f64>,
    pub unified_loss: f64,
    /// Unified model's loss over the real training samples after the step.
    pub train_loss: f64,
}

pub struct FitOutput {
    pub unified: ScorerNet,
    pub log: Vec<EpochRecord>,
    pub clusters: ClusterAssignment,
    pub distributions: DistributionSet,
    /// Ids of the samples whose score histories were tracked.
    pub history_ids: Vec<String>,
}

/// Full collaborative training with the sequence-predictor weighting.
pub fn fit(train: &FeatureDataset, cfg: &TrainConfig, seed: u64) -> Result<FitOutput> {
    fit_with(train, cfg, seed, &mut SequenceImportance::new(), &mut |_, _| Ok(()))
}

/// [`fit`] with a chosen importance estimator and a per-epoch observer that
/// sees each log record and the unified model after broadcast.
pub fn fit_with(
    train: &FeatureDataset,
    cfg: &TrainConfig,
    seed: u64,
    estimator: &mut dyn ImportanceEstimator,
    observer: &mut dyn FnMut(&EpochRecord, &ScorerNet) -> Result<()>,
) -> Result<FitOutput> {
    cfg.validate()?;
    let prior = cfg.prior()?;
    let clusters = kmeans(train, cfg.c, rng::derive(seed, "kmeans", 0), cfg.kmeans)?;
    let mode = AnomalyMode::for_count(train.count(Label::Anomaly));
    let dist = build_distributions(train, &clusters, cfg.t, mode, &cfg.hadg, rng::derive(seed, "hadg", 0))?;
    let used = dist.used_indices();
    let supports: Vec<Vec<usize>> = dist.subsets.iter().map(|s| s.support.clone()).collect();
    let real: Vec<&Sample> = train.samples().iter().collect();

    let mut unified = ScorerNet::init(train.dim(), cfg.hidden, rng::derive(seed, "init", 0));
    let mut unified_opt = if cfg.plain_sgd {
        Optimizer::Sgd { lr: cfg.lr_unified }
    } else {
        Optimizer::adam(cfg.lr_unified, unified.params().len())
    };
    let mut bases = vec![unified.clone(); cfg.t];
    let mut opts = vec![Optimizer::adam(cfg.lr_base, unified.params().len()); cfg.t];
    let importance_seed = rng::derive(seed, "importance", 0);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let base = train_bases_epoch(
            &mut bases,
            &mut opts,
            &dist.pool,
            &supports,
            cfg,
            &prior,
            epoch,
            seed,
            Some(&used),
        )?;
        let scores = base.scores.expect("scores requested");
        let imp = estimator.estimate(&EpochContext {
            epoch,
            dist: &dist,
            used: &used,
            scores: &scores,
            cfg,
            seed: importance_seed,
        })?;
        let step = unified_update(&mut unified, &mut unified_opt, &bases, &dist, &imp.w, &prior, cfg)?;
        broadcast(&unified, &mut bases)?;
        let record = EpochRecord {
            epoch,
            support_loss: base.support_loss,
            query_loss: step.query_loss,
            r: imp.r,
            w: imp.w,
            psi_loss: imp.psi_loss,
            unified_loss: step.total,
            train_loss: unified.loss(&real, &prior, cfg.reduction)?,
        };
        observer(&record, &unified)?;
        log.push(record);
    }

    let history_ids = used.iter().map(|&j| dist.pool.get(j).id.clone()).collect();
    Ok(FitOutput {
        unified,
        log,
        clusters,
        distributions: dist,
        history_ids,
    })
}

/// Independently trained bases, one per support set, for `cfg.epochs`
/// epochs at the base learning rate. Base `i` starts from its own seed.
pub fn train_ensemble(
    pool: &FeatureDataset,
    supports: &[Vec<usize>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<ScorerNet>, Vec<Vec<f64>>)> {
    let prior = cfg.prior()?;
    let mut bases: Vec<ScorerNet> = (0..supports.len())
        .map(|i| ScorerNet::init(pool.dim(), cfg.hidden, rng::derive(seed, "init", i as u64)))
        .collect();
    let n = ScorerNet::param_count(pool.dim(), cfg.hidden);
    let mut opts = vec![Optimizer::adam(cfg.lr_base, n); supports.len()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let out = train_bases_epoch(&mut bases, &mut opts, pool, supports, cfg, &prior, epoch, seed, None)?;
        losses.push(out.support_loss);
    }
    Ok((bases, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hadg::{DistributionDataset, NormalSource};
    use crate::synthgen::{generate, MixtureSpec, PseudoKind};

    /// Three quarters of the benchmark normals plus ten anomalies of one class.
    fn benchmark_train(seed: u64) -> FeatureDataset {
        let ds = generate(&MixtureSpec::default_benchmark(seed)).unwrap();
        let (mut seen, mut taken) = (0, 0);
        ds.filter(|s| match s.label {
            Label::Normal => {
                seen += 1;
                seen % 4 != 0
            }
            Label::Anomaly => {
                let keep = s.class_tag.as_deref() == Some("shift_up") && taken < 10;
                taken += usize::from(keep);
                keep
            }
        })
    }

    fn sample(id: &str, x: Vec<f64>, label: Label) -> Sample {
        Sample::new(id, x, label, None).unwrap()
    }

    /// Pool `n0..n3` (normals) and `a0, a1`, with one subset per entry of
    /// `(support, query, support_normals)`.
    fn tiny_set(subsets: &[(&[usize], &[usize])]) -> DistributionSet {
        let pool = FeatureDataset::new(
            2,
            vec![
                sample("n0", vec![0.1, 0.2], Label::Normal),
                sample("n1", vec![-0.3, 0.4], Label::Normal),
                sample("n2", vec![0.5, -0.1], Label::Normal),
                sample("n3", vec![0.2, 0.0], Label::Normal),
                sample("a0", vec![2.0, 1.5], Label::Anomaly),
                sample("a1", vec![-1.0, 2.5], Label::Anomaly),
            ],
        )
        .unwrap();
        let subsets = subsets
            .iter()
            .enumerate()
            .map(|(i, (support, query))| DistributionDataset {
                index: i,
                support: support.to_vec(),
                query: query.to_vec(),
                support_normal_source: NormalSource::All,
                query_normal_source: NormalSource::All,
                support_pseudo_kind: PseudoKind::MixBlend,
                query_pseudo_kind: PseudoKind::NoiseMask,
                virtual_seen: vec![],
                virtual_unseen: vec![],
                support_normals: support.iter().copied().filter(|&j| j < 4).collect(),
            })
            .collect();
        DistributionSet {
            pool,
            subsets,
            real_count: 6,
        }
    }

    fn prior() -> DeviationPrior {
        DeviationPrior::analytic(5.0).unwrap()
    }

    fn adam(net: &ScorerNet, lr: f64) -> Optimizer {
        Optimizer::adam(lr, net.params().len())
    }

    #[test]
    fn zero_scored_normal_leaves_base_unchanged() {
        let set = tiny_set(&[(&[0], &[1])]);
        let mut bases = vec![ScorerNet::zeros(2, 3)];
        let mut opts = vec![adam(&bases[0], 0.1)];
        let cfg = TrainConfig::default();
        train_bases_epoch(&mut bases, &mut opts, &set.pool, &[vec![0]], &cfg, &prior(), 0, 1, None).unwrap();
        assert_eq!(bases[0], ScorerNet::zeros(2, 3));
    }

    #[test]
    fn identical_subsets_and_init_train_identically() {
        let set = tiny_set(&[(&[0, 1, 4], &[2, 5])]);
        let init = ScorerNet::init(2, 4, 9);
        let mut bases = [init.clone(), init.clone()];
        let mut opts = [adam(&init, 0.01), adam(&init, 0.01)];
        let supports = [vec![0, 1, 4], vec![0, 1, 4]];
        let cfg = TrainConfig::default();
        // Different base index means different batch draws, so use one seed per call.
        for i in 0..2 {
            let (b, o) = (&mut bases[i..=i], &mut opts[i..=i]);
            train_bases_epoch(b, o, &set.pool, &supports[i..=i], &cfg, &prior(), 0, 5, None).unwrap();
        }
        assert_eq!(bases[0], bases[1]);
        assert_ne!(bases[0], init);
    }

    #[test]
    fn empty_support_is_a_config_error() {
        let set = tiny_set(&[(&[0], &[1])]);
        let mut bases = vec![ScorerNet::zeros(2, 3)];
        let mut opts = vec![adam(&bases[0], 0.1)];
        let err = train_bases_epoch(&mut bases, &mut opts, &set.pool, &[vec![]], &TrainConfig::default(), &prior(), 0, 1, None);
        assert!(err.unwrap_err().is_config());
    }

    #[test]
    fn one_epoch_lowers_support_loss_on_benchmark() {
        let train = benchmark_train(11);
        let cfg = TrainConfig::default();
        let clusters = kmeans(&train, 3, 1, cfg.kmeans).unwrap();
        let dist = build_distributions(&train, &clusters, 7, AnomalyMode::FewShot, &cfg.hadg, 2).unwrap();
        let supports: Vec<Vec<usize>> = dist.subsets.iter().map(|s| s.support.clone()).collect();
        let init = ScorerNet::init(train.dim(), cfg.hidden, 3);
        let before: Vec<f64> = supports
            .iter()
            .map(|s| {
                let samples: Vec<&Sample> = s.iter().map(|&j| dist.pool.get(j)).collect();
                base_loss(&init, &samples, &prior(), cfg.reduction).unwrap()
            })
            .collect();
        let mut bases = vec![init.clone(); 7];
        let mut opts = vec![adam(&init, cfg.lr_base); 7];
        let out = train_bases_epoch(&mut bases, &mut opts, &dist.pool, &supports, &cfg, &prior(), 0, 4, None).unwrap();
        let improved = before.iter().zip(&out.support_loss).filter(|(b, a)| a < b).count();
        assert!(improved >= 6, "{before:?} -> {:?}", out.support_loss);
    }

    #[test]
    fn zero_query_gradients_leave_unified_unchanged() {
        let set = tiny_set(&[(&[1], &[0]), (&[0], &[2])]);
        let mut g = ScorerNet::zeros(2, 3);
        let bases = vec![g.clone(), g.clone()];
        let mut opt = adam(&g, 0.005);
        unified_update(&mut g, &mut opt, &bases, &set, &[0.5, 0.5], &prior(), &TrainConfig::default()).unwrap();
        assert_eq!(g, ScorerNet::zeros(2, 3));
    }

    #[test]
    fn single_base_update_is_a_plain_adam_step() {
        let set = tiny_set(&[(&[0, 4], &[1, 2, 5])]);
        let mut g = ScorerNet::init(2, 5, 1);
        let base = ScorerNet::init(2, 5, 2);
        let mut opt = adam(&g, 0.005);
        let mut expected = g.clone();
        let mut opt2 = adam(&g, 0.005);
        let (_, grad) = base.loss_and_grad(&set.subsets[0].query_samples(&set.pool), &prior(), Reduction::Balanced).unwrap();
        opt2.step(expected.params_mut(), &grad).unwrap();
        unified_update(&mut g, &mut opt, &[base], &set, &[1.0], &prior(), &TrainConfig::default()).unwrap();
        assert_eq!(g, expected);
    }

    use crate::diffnet::Reduction;

    #[test]
    fn one_hot_weight_matches_single_base() {
        let two = tiny_set(&[(&[0, 4], &[1, 5]), (&[1, 5], &[2, 3, 4])]);
        let one = tiny_set(&[(&[1, 5], &[2, 3, 4])]);
        let bases = [ScorerNet::init(2, 5, 7), ScorerNet::init(2, 5, 8)];
        let start = ScorerNet::init(2, 5, 1);
        let (mut g2, mut g1) = (start.clone(), start.clone());
        let (mut o2, mut o1) = (adam(&start, 0.005), adam(&start, 0.005));
        let cfg = TrainConfig::default();
        unified_update(&mut g2, &mut o2, &bases, &two, &[0.0, 1.0], &prior(), &cfg).unwrap();
        unified_update(&mut g1, &mut o1, &bases[1..], &one, &[1.0], &prior(), &cfg).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn uniform_weights_scale_unweighted_sum() {
        let set = tiny_set(&[(&[0, 4], &[1, 5]), (&[1, 5], &[2, 3, 4]), (&[2], &[0, 4, 5])]);
        let bases: Vec<ScorerNet> = (0..3).map(|i| ScorerNet::init(2, 5, 20 + i)).collect();
        let start = ScorerNet::zeros(2, 5);
        let mut g = start.clone();
        let mut sgd = Optimizer::Sgd { lr: 1.0 };
        let w = [1.0 / 3.0; 3];
        unified_update(&mut g, &mut sgd, &bases, &set, &w, &prior(), &TrainConfig::default()).unwrap();
        let queries: Vec<Vec<&Sample>> = set.subsets.iter().map(|s| s.query_samples(&set.pool)).collect();
        let pairs: Vec<(&ScorerNet, &[&Sample])> = bases.iter().zip(&queries).map(|(b, q)| (b, q.as_slice())).collect();
        let plain = crate::losses::cdl_loss(&pairs, None, &prior(), Reduction::Balanced).unwrap();
        for (k, p) in g.params().iter().enumerate() {
            let sum: f64 = plain.grads.iter().map(|gr| gr[k]).sum();
            assert!((-p - sum / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_equalizes_and_is_idempotent() {
        let g = ScorerNet::init(2, 4, 1);
        let mut bases = vec![ScorerNet::init(2, 4, 2), ScorerNet::init(2, 4, 3)];
        broadcast(&g, &mut bases).unwrap();
        let once = bases.clone();
        broadcast(&g, &mut bases).unwrap();
        assert_eq!(once, bases);
        for b in &bases {
            for x in [[0.3, -1.0], [2.0, 2.0]] {
                assert_eq!(b.score(&x), g.score(&x));
            }
        }
        let mut wrong = vec![ScorerNet::zeros(3, 4)];
        assert!(matches!(broadcast(&g, &mut wrong), Err(Error::Shape { .. })));
    }

    #[test]
    fn bases_diverge_after_broadcast() {
        let set = tiny_set(&[(&[0, 1, 4], &[2]), (&[2, 3, 5], &[0])]);
        let g = ScorerNet::init(2, 4, 1);
        let mut bases = vec![ScorerNet::zeros(2, 4); 2];
        broadcast(&g, &mut bases).unwrap();
        let mut opts = vec![adam(&g, 0.01); 2];
        let supports = vec![set.subsets[0].support.clone(), set.subsets[1].support.clone()];
        train_bases_epoch(&mut bases, &mut opts, &set.pool, &supports, &TrainConfig::default(), &prior(), 0, 3, None)
            .unwrap();
        assert_ne!(bases[0], bases[1]);
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn short_fit_keeps_uniform_weights() {
        let out = fit(&benchmark_train(3), &quick_cfg(4), 1).unwrap();
        assert_eq!(out.log.len(), 4);
        for rec in &out.log {
            assert!(rec.w.iter().all(|&w| w == 1.0 / 7.0));
            assert!(rec.r.is_none());
        }
    }

    #[test]
    fn default_fit_lowers_training_loss_and_is_deterministic() {
        let train = benchmark_train(5);
        let a = fit(&train, &TrainConfig::default(), 42).unwrap();
        let first = a.log.first().unwrap().train_loss;
        let last = a.log.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        for rec in &a.log[5..] {
            let r = rec.r.as_ref().expect("weights estimated after warmup");
            assert!(r.iter().all(|&x| x >= 0.0));
        }
        let b = fit(&train, &TrainConfig::default(), 42).unwrap();
        assert_eq!(a.unified, b.unified);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn accuracy_weighting_is_normalized() {
        let mut est = super::super::AccuracyImportance;
        let out = fit_with(&benchmark_train(4), &quick_cfg(8), 2, &mut est, &mut |_, _| Ok(())).unwrap();
        for rec in &out.log {
            assert!((rec.w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(rec.w.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn history_ids_cover_pool_used_by_subsets() {
        let out = fit(&benchmark_train(6), &quick_cfg(1), 0).unwrap();
        let used = out.distributions.used_indices();
        assert_eq!(out.history_ids.len(), used.len());
        assert!(out.history_ids.iter().any(|id| id.starts_with("pseudo-")));
    }
}
