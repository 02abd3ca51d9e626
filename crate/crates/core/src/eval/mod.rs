//! Metrics, evaluation protocols, the ablation variants and sweeps.

mod auc;
mod protocol;
mod sweep;
mod variants;

pub use auc::{auc, auc_of};
pub use protocol::{
    audit_leakage, evaluate, fine_tune, run_cross_domain, run_protocol, split_for_seed, EvalResult, ProtocolKind,
    ProtocolRun, ProtocolSpec, ProtocolSplit, SeedResult, SeedRun, Summary, BENCHMARK_SEEDS,
};
pub use sweep::{results_csv, sweep, sweep_csv, SweepParam, SweepRow};
pub use variants::{
    hadg_subsets, Ahl, CdlMinus, HadgOnly, Homogeneous, Model, RamFull, RamHadg, TrainRequest, Trained, TrainingLog,
    Variant, VariantRegistry,
};
