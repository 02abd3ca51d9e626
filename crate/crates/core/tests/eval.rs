use std::collections::BTreeSet;

use ahl_core::data::{FeatureDataset, Label, Sample};
use ahl_core::eval::{
    run_cross_domain, run_protocol, split_for_seed, sweep, sweep_csv, EvalResult, ProtocolSpec, SweepParam,
    TrainingLog, VariantRegistry,
};
use ahl_core::synthgen::{generate, shifted_copy, MixtureSpec};
use ahl_core::train::TrainConfig;
use ahl_core::Error;

fn benchmark() -> FeatureDataset {
    generate(&MixtureSpec::default_benchmark(0)).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    }
}

fn run(ds: &FeatureDataset, spec: &ProtocolSpec, cfg: &TrainConfig, variant: &str) -> EvalResult {
    let registry = VariantRegistry::with_defaults();
    run_protocol(ds, spec, cfg, registry.get(variant).unwrap(), None).unwrap().result
}

fn all_aucs(r: &EvalResult) -> Vec<f64> {
    r.seeds
        .iter()
        .flat_map(|s| [Some(s.auc_overall), s.auc_seen, s.auc_unseen, s.auc_unseen_per_class])
        .flatten()
        .collect()
}

#[test]
fn single_anomaly_class_leaves_unseen_absent() {
    let ds = benchmark().filter(|s| s.label == Label::Normal || s.class_tag.as_deref() == Some("side_shift"));
    let spec = ProtocolSpec::hard(10, "side_shift").with_seeds(&[1, 2]);
    let r = run(&ds, &spec, &quick(), "AHL");
    assert!(r.auc_unseen.is_none());
    assert!(r.auc_unseen_per_class.is_none());
    assert!(r.auc_seen.is_some());
}

#[test]
fn repeated_runs_and_repeated_seeds_agree() {
    let ds = benchmark();
    let spec = ProtocolSpec::general(10).with_seeds(&[4, 4]);
    let a = run(&ds, &spec, &quick(), "AHL");
    let b = run(&ds, &spec, &quick(), "AHL");
    assert_eq!(a, b);
    assert_eq!(a.seeds[0], a.seeds[1]);
}

#[test]
fn every_auc_is_a_probability_and_classes_partition() {
    let ds = benchmark();
    let spec = ProtocolSpec::hard(10, "shift_down").with_seeds(&[1, 2]);
    let registry = VariantRegistry::with_defaults();
    for name in registry.names() {
        let result = run(&ds, &spec, &quick(), name);
        assert!(all_aucs(&result).iter().all(|a| (0.0..=1.0).contains(a)), "{name}");
        for seed in &result.seeds {
            let split = split_for_seed(&ds, &spec, seed.seed).unwrap();
            let test_classes: BTreeSet<String> = split
                .test
                .samples()
                .iter()
                .filter(|s| s.label == Label::Anomaly)
                .map(|s| s.class_tag.clone().unwrap())
                .collect();
            let reported: BTreeSet<String> = seed.per_class.keys().cloned().collect();
            assert_eq!(reported, test_classes);
            assert!(split.seen_classes.contains("shift_down"));
        }
    }
}

#[test]
fn unknown_variant_and_missing_class_are_config_errors() {
    let registry = VariantRegistry::with_defaults();
    assert!(matches!(registry.get("Nope"), Err(Error::Config { .. })));
    let spec = ProtocolSpec::hard(10, "missing").with_seeds(&[1]);
    let err = run_protocol(&benchmark(), &spec, &quick(), registry.get("AHL").unwrap(), None).err().unwrap();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "protocol.seen_class"), "{err:?}");
}

#[test]
fn ram_full_with_one_base_is_homogeneous() {
    let ds = benchmark();
    let spec = ProtocolSpec::general(10).with_seeds(&[1, 2]);
    let cfg = TrainConfig { t: 1, ..quick() };
    let mut ram = run(&ds, &spec, &cfg, "RamFULL");
    let homogeneous = run(&ds, &spec, &cfg, "Homogeneous");
    ram.variant = homogeneous.variant.clone();
    assert_eq!(ram, homogeneous);
}

#[test]
fn cdl_minus_weights_are_normalized_every_epoch() {
    let ds = benchmark();
    let split = split_for_seed(&ds, &ProtocolSpec::general(10), 3).unwrap();
    let registry = VariantRegistry::with_defaults();
    let trained = registry
        .get("CDL_minus")
        .unwrap()
        .train(&ahl_core::eval::TrainRequest {
            train: &split.train,
            cfg: &TrainConfig::default(),
            seed: 3,
            snapshot_every: None,
        })
        .unwrap();
    let TrainingLog::Collaborative(log) = trained.log else {
        panic!("CDL_minus keeps a collaborative log");
    };
    assert!(trained.predictor.is_none());
    for rec in &log {
        assert!((rec.w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(rec.w.iter().all(|&w| w >= 0.0));
    }
}

#[test]
fn cross_domain_on_the_source_itself() {
    let ds = benchmark();
    let cfg = TrainConfig::default();
    let registry = VariantRegistry::with_defaults();
    let variant = registry.get("AHL").unwrap();
    let same = run_protocol(&ds, &ProtocolSpec::general(10), &cfg, variant, None)
        .unwrap()
        .result;

    let mut zero_shot = ProtocolSpec::cross_domain(10);
    zero_shot.fine_tune_epochs = 0;
    let r = run_cross_domain(&ds, &ds, &zero_shot, &cfg, variant).unwrap().result;
    assert_eq!(r.auc_overall, same.auc_overall);

    let r = run_cross_domain(&ds, &ds, &ProtocolSpec::cross_domain(10), &cfg, variant).unwrap().result;
    let gap = (r.auc_overall.mean - same.auc_overall.mean).abs();
    assert!(gap <= 0.02, "fine-tuned {} vs same-domain {}", r.auc_overall.mean, same.auc_overall.mean);
}

#[test]
fn cross_domain_shifted_target_and_shape_mismatch() {
    let ds = benchmark();
    let target = shifted_copy(&ds, 0.5, "target-").unwrap();
    let registry = VariantRegistry::with_defaults();
    let spec = ProtocolSpec::cross_domain(10).with_seeds(&[1, 2]);
    let r = run_cross_domain(&ds, &target, &spec, &quick(), registry.get("HADG_only").unwrap()).unwrap().result;
    assert!(all_aucs(&r).iter().all(|a| (0.0..=1.0).contains(a)));

    let narrow: Vec<Sample> = ds
        .samples()
        .iter()
        .map(|s| Sample::new(s.id.clone(), s.feature.as_slice()[..8].to_vec(), s.label, s.class_tag.clone()).unwrap())
        .collect();
    let narrow = FeatureDataset::new(8, narrow).unwrap();
    let err = run_cross_domain(&ds, &narrow, &spec, &quick(), registry.get("AHL").unwrap()).err().unwrap();
    assert!(matches!(err, Error::Shape { .. }), "{err:?}");
}

#[test]
fn cluster_sweep_has_one_row_per_value_and_repeats_exactly() {
    let ds = benchmark();
    let spec = ProtocolSpec::general(10).with_seeds(&[1, 2]);
    let registry = VariantRegistry::with_defaults();
    let variant = registry.get("AHL").unwrap();
    let rows = sweep(&ds, SweepParam::C, &[2, 3, 4, 5], &quick(), &spec, variant).unwrap();
    let csv = sweep_csv(&rows).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(csv.lines().next().unwrap().contains("std"));
    let again = sweep_csv(&sweep(&ds, SweepParam::C, &[2, 3, 4, 5], &quick(), &spec, variant).unwrap()).unwrap();
    assert_eq!(csv, again);
}

#[test]
fn history_sweep_raises_warmup() {
    let ds = benchmark();
    let spec = ProtocolSpec::general(10).with_seeds(&[1]);
    let registry = VariantRegistry::with_defaults();
    let rows = sweep(&ds, SweepParam::K, &[1, 3, 5, 7], &quick(), &spec, registry.get("AHL").unwrap()).unwrap();
    let warmups: Vec<usize> = rows.iter().map(|r| r.warmup_epochs).collect();
    assert_eq!(warmups, vec![5, 5, 5, 7]);
}
