use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

use super::protocol::{run_protocol, EvalResult, ProtocolSpec, Summary};
use super::variants::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    C,
    K,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::C => "C",
            SweepParam::K => "K",
        }
    }

    /// `base` with this parameter set to `value`; `K` raises the warmup to fit.
    pub fn apply(self, base: &TrainConfig, value: usize) -> Result<TrainConfig> {
        let cfg = match self {
            SweepParam::C => TrainConfig { c: value, ..base.clone() },
            SweepParam::K => base.clone().with_history(value),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: usize,
    pub warmup_epochs: usize,
    pub result: EvalResult,
}

pub fn sweep(
    ds: &FeatureDataset,
    param: SweepParam,
    values: &[usize],
    base: &TrainConfig,
    spec: &ProtocolSpec,
    variant: &dyn Variant,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep.values", "need at least one value"));
    }
    values
        .iter()
        .map(|&value| {
            let cfg = param.apply(base, value)?;
            let run = run_protocol(ds, spec, &cfg, variant, None)?;
            Ok(SweepRow {
                param,
                value,
                warmup_epochs: cfg.warmup_epochs,
                result: run.result,
            })
        })
        .collect()
}

fn cells(s: Option<Summary>) -> [String; 2] {
    match s {
        Some(s) => [s.mean.to_string(), s.std.to_string()],
        None => [String::new(), String::new()],
    }
}

/// One row per swept value with mean and std of each AUC form.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "param",
        "value",
        "variant",
        "auc_overall_mean",
        "auc_overall_std",
        "auc_seen_mean",
        "auc_seen_std",
        "auc_unseen_mean",
        "auc_unseen_std",
        "auc_unseen_per_class_mean",
        "auc_unseen_per_class_std",
    ])
    .map_err(csv_err)?;
    for row in rows {
        let r = &row.result;
        let mut rec = vec![row.param.name().to_string(), row.value.to_string(), r.variant.clone()];
        rec.extend(cells(Some(r.auc_overall)));
        rec.extend(cells(r.auc_seen));
        rec.extend(cells(r.auc_unseen));
        rec.extend(cells(r.auc_unseen_per_class));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Plot data: one row per variant, setting and seed.
pub fn results_csv(results: &[EvalResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "setting",
        "M",
        "seed",
        "auc_overall",
        "auc_seen",
        "auc_unseen",
        "auc_unseen_per_class",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in results {
        let setting = serde_json::to_value(r.setting)?;
        for s in &r.seeds {
            w.write_record([
                r.variant.clone(),
                setting.as_str().unwrap_or_default().to_string(),
                r.m.to_string(),
                s.seed.to_string(),
                s.auc_overall.to_string(),
                opt(s.auc_seen),
                opt(s.auc_unseen),
                opt(s.auc_unseen_per_class),
            ])
            .map_err(csv_err)?;
        }
    }
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
