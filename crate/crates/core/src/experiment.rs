//! Config-driven runs: dataset loading, protocol execution over variants,
//! artifacts on disk, and bitwise replay from a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{export_csv, ingest_csv, write_csv, FeatureDataset};
use crate::error::{Error, Result};
use crate::eval::{
    results_csv, run_cross_domain, run_protocol, sweep, sweep_csv, EvalResult, Model, ProtocolKind, ProtocolRun,
    ProtocolSpec, SweepParam, SweepRow, VariantRegistry,
};
use crate::rng;
use crate::synthgen::{generate, shifted_copy, MixtureSpec};
use crate::train::TrainConfig;

/// Bumped whenever a change alters numeric results for an unchanged config.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    pub synthetic: Option<MixtureSpec>,
    /// The built-in benchmark mixture generated with this seed.
    pub benchmark: Option<u64>,
    /// Cross-domain target; defaults to the source shifted by `protocol.target_shift`.
    pub target_csv: Option<PathBuf>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let sources = [self.csv.is_some(), self.synthetic.is_some(), self.benchmark.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::config("data", "set exactly one of csv, synthetic, benchmark"));
        }
        if let Some(spec) = &self.synthetic {
            spec.validate().map_err(|e| match e {
                Error::Config { field, message } => Error::config(format!("data.synthetic.{field}"), message),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(&self) -> Result<FeatureDataset> {
        self.validate()?;
        match (&self.csv, &self.synthetic, self.benchmark) {
            (Some(path), _, _) => ingest_csv(path),
            (_, Some(spec), _) => generate(spec),
            (_, _, Some(seed)) => generate(&MixtureSpec::default_benchmark(seed)),
            _ => unreachable!("validated"),
        }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.csv, &mut self.target_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<usize>,
}

fn default_variants() -> Vec<String> {
    vec!["AHL".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mixed into every protocol seed.
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub protocol: ProtocolSpec,
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    /// Default output directory; the command line may override it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Save the unified model every this many epochs.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("config")
                .to_string();
            Error::config(field, e.to_string().trim_end())
        })
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve(base);
        if let Some(out) = &mut cfg.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.protocol.validate()?;
        if self.variants.is_empty() {
            return Err(Error::config("variants", "need at least one variant"));
        }
        let registry = VariantRegistry::with_defaults();
        for v in &self.variants {
            registry.get(v)?;
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::config("sweep.values", "need at least one value"));
            }
        }
        Ok(())
    }

    /// Protocol seeds after mixing in the global seed.
    pub fn effective_protocol(&self) -> ProtocolSpec {
        let seeds: Vec<u64> = self.protocol.seeds.iter().map(|&s| rng::derive(self.seed, "protocol", s)).collect();
        self.protocol.clone().with_seeds(&seeds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub protocol_seed: u64,
    pub effective_seed: u64,
    pub train_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config: RunConfig,
    pub seeds: Vec<SeedRecord>,
    pub dataset_sha256: String,
    pub results_sha256: String,
    pub files: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn dataset_digest(ds: &FeatureDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(ds, &mut buf)?;
    Ok(sha256_hex(&buf))
}

struct Writer<'a> {
    root: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn checkpoint(&mut self, rel: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.write(rel, &buf)
    }
}

fn write_artifacts(w: &mut Writer<'_>, variant: &str, run: &ProtocolRun) -> Result<()> {
    for (k, seed_run) in run.runs.iter().enumerate() {
        let dir = format!("{variant}/seed-{k:02}");
        w.write(&format!("logs/{dir}.jsonl"), seed_run.trained.log.to_jsonl()?.as_bytes())?;
        match &seed_run.trained.model {
            Model::Unified(g) => w.checkpoint(&format!("checkpoints/{dir}/unified.ckpt"), |b| g.write_to(b))?,
            Model::Ensemble(nets) => {
                for (i, net) in nets.iter().enumerate() {
                    w.checkpoint(&format!("checkpoints/{dir}/base-{i}.ckpt"), |b| net.write_to(b))?;
                }
            }
        }
        if let Some(psi) = &seed_run.trained.predictor {
            w.checkpoint(&format!("checkpoints/{dir}/predictor.ckpt"), |b| psi.write_to(b))?;
        }
        for (epoch, g) in &seed_run.trained.snapshots {
            w.checkpoint(&format!("checkpoints/{dir}/epoch-{epoch:03}.ckpt"), |b| g.write_to(b))?;
        }
    }
    Ok(())
}

/// Source and, for cross-domain runs, target datasets.
pub fn load_datasets(cfg: &RunConfig) -> Result<(FeatureDataset, Option<FeatureDataset>)> {
    let source = cfg.data.load()?;
    if cfg.protocol.kind != ProtocolKind::CrossDomain {
        return Ok((source, None));
    }
    let target = match &cfg.data.target_csv {
        Some(path) => ingest_csv(path)?,
        None => shifted_copy(&source, cfg.protocol.target_shift, "target-")?,
    };
    Ok((source, Some(target)))
}

pub struct RunOutput {
    pub results: Vec<EvalResult>,
    pub manifest: Manifest,
}

/// Runs every configured variant and writes the artifacts under `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let (source, target) = load_datasets(cfg)?;
    let spec = cfg.effective_protocol();
    let registry = VariantRegistry::with_defaults();
    fs::create_dir_all(out)?;
    let mut w = Writer {
        root: out,
        files: Vec::new(),
    };
    let mut results = Vec::with_capacity(cfg.variants.len());
    for name in &cfg.variants {
        let variant = registry.get(name)?;
        let run = match &target {
            Some(t) => run_cross_domain(&source, t, &spec, &cfg.train, variant)?,
            None => run_protocol(&source, &spec, &cfg.train, variant, cfg.checkpoint_every)?,
        };
        write_artifacts(&mut w, name, &run)?;
        results.push(run.result);
    }
    let results_json = serde_json::to_string_pretty(&results)?;
    w.write("results.json", results_json.as_bytes())?;
    w.write("results.csv", results_csv(&results)?.as_bytes())?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seeds: cfg
            .protocol
            .seeds
            .iter()
            .zip(&spec.seeds)
            .map(|(&p, &e)| SeedRecord {
                protocol_seed: p,
                effective_seed: e,
                train_seed: rng::derive(e, "train", 0),
            })
            .collect(),
        dataset_sha256: dataset_digest(&source)?,
        results_sha256: sha256_hex(results_json.as_bytes()),
        files: w.files.clone(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutput { results, manifest })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        other => {
            return Err(Error::Replay(format!(
                "manifest format version {other:?}, this build writes {FORMAT_VERSION}"
            )))
        }
    }
    Ok(serde_json::from_value(value)?)
}

/// Re-runs a recorded configuration into `out` and checks the dataset and
/// results against the recorded digests.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<RunOutput> {
    let recorded = read_manifest(manifest_path)?;
    let (source, _) = load_datasets(&recorded.config)?;
    let digest = dataset_digest(&source)?;
    if digest != recorded.dataset_sha256 {
        return Err(Error::Replay(format!(
            "dataset digest {digest} differs from recorded {}",
            recorded.dataset_sha256
        )));
    }
    let fresh = run(&recorded.config, out)?;
    if fresh.manifest.seeds != recorded.seeds {
        return Err(Error::Replay("recorded seeds do not follow from the recorded config".into()));
    }
    if fresh.manifest.results_sha256 != recorded.results_sha256 {
        return Err(Error::Replay(format!(
            "results digest {} differs from recorded {}",
            fresh.manifest.results_sha256, recorded.results_sha256
        )));
    }
    Ok(fresh)
}

/// Sweeps the configured parameter for each variant; writes `sweep.csv` and `sweep.json`.
pub fn run_sweep(cfg: &RunConfig, sweep_cfg: &SweepConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if sweep_cfg.values.is_empty() {
        return Err(Error::config("sweep.values", "need at least one value"));
    }
    if cfg.protocol.kind == ProtocolKind::CrossDomain {
        return Err(Error::config("protocol.kind", "sweeps run the general or hard protocol"));
    }
    let (source, _) = load_datasets(cfg)?;
    let spec = cfg.effective_protocol();
    let registry = VariantRegistry::with_defaults();
    let mut rows = Vec::new();
    for name in &cfg.variants {
        rows.extend(sweep(&source, sweep_cfg.param, &sweep_cfg.values, &cfg.train, &spec, registry.get(name)?)?);
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), sweep_csv(&rows)?)?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(rows)
}

/// Writes a generated dataset to `path` as CSV.
pub fn gen_data(spec: &MixtureSpec, path: &Path) -> Result<FeatureDataset> {
    let ds = generate(spec)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    export_csv(&ds, path)?;
    Ok(ds)
}

/// Reads a mixture description from TOML.
pub fn load_mixture(path: &Path) -> Result<MixtureSpec> {
    let spec: MixtureSpec =
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::config("mixture", e.to_string().trim_end()))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
variants = ["AHL"]

[data]
benchmark = 0

[train]
epochs = 2

[protocol]
kind = "general"
M = 10
seeds = [1]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.t, 7);
        assert_eq!(cfg.protocol.fine_tune_epochs, 10);
    }

    #[test]
    fn config_errors_name_fields() {
        let field = |text: &str| match RunConfig::from_toml(text).and_then(|c| c.validate()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{:?}", other.map(|_| ())),
        };
        assert_eq!(field(&MINIMAL.replace("epochs = 2", "T = 0")), "train.T");
        assert_eq!(field(&MINIMAL.replace("benchmark = 0", "benchmark = 0\ncsv = \"x.csv\"")), "data");
        assert_eq!(field(&MINIMAL.replace("[\"AHL\"]", "[\"Nope\"]")), "variants");
        assert_eq!(field(&MINIMAL.replace("M = 10", "M = 0")), "protocol.M");
        assert_eq!(field(&MINIMAL.replace("kind = \"general\"", "kind = \"hard\"")), "protocol.seen_class");
        assert_eq!(field(&MINIMAL.replace("epochs = 2", "bogus = 2")), "bogus");
    }

    #[test]
    fn stale_manifest_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, r#"{"format_version": 999}"#).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Replay(_))));
    }
}
