//! Labeled feature datasets, CSV ingestion and deterministic splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Deref;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A finite feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("feature vector must be non-empty".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "feature {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    pub fn from_int(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Anomaly),
            _ => None,
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomaly => 1,
        }
    }

    /// The label as a regression target in {0, 1}.
    pub fn target(self) -> f64 {
        self.as_int() as f64
    }

    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub feature: FeatureVector,
    pub label: Label,
    /// Anomaly class or normal mode; used only to build protocols.
    pub class_tag: Option<String>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        values: Vec<f64>,
        label: Label,
        class_tag: Option<String>,
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            feature: FeatureVector::new(values)?,
            label,
            class_tag,
        })
    }
}

/// Labeled feature vectors sharing one dimension, with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    dim: usize,
    samples: Vec<Sample>,
}

impl FeatureDataset {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Schema("dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.feature.dim() != dim {
                return Err(Error::Schema(format!(
                    "sample `{}` has dimension {}, dataset has {dim}",
                    s.id,
                    s.feature.dim()
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, idx: usize) -> &Sample {
        &self.samples[idx]
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// Indices of normal samples (the X_n view).
    pub fn normal_indices(&self) -> Vec<usize> {
        self.indices_with(Label::Normal)
    }

    /// Indices of anomalous samples (the X_a view).
    pub fn anomaly_indices(&self) -> Vec<usize> {
        self.indices_with(Label::Anomaly)
    }

    fn indices_with(&self, label: Label) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Copies out the samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Self {
        Self {
            dim: self.dim,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Concatenates two datasets; ids must remain unique.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Self::new(self.dim, samples)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }
}

/// Fractions for a seeded stratified split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub fractions: Vec<f64>,
}

impl SplitSpec {
    pub fn new(seed: u64, fractions: Vec<f64>) -> Result<Self> {
        let spec = Self { seed, fractions };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Split("no fractions given".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Split(format!("fraction {f} outside (0, 1]")));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Split(format!("fractions sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // Stable sort keeps lower part indices first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Splits `ds` into `spec.fractions.len()` disjoint parts, stratified by label.
///
/// Each label's members are shuffled with a seed derived from `spec.seed` and
/// dealt out by largest-remainder counts; within a part, input order is kept.
pub fn stratified_split(ds: &FeatureDataset, spec: &SplitSpec) -> Result<Vec<FeatureDataset>> {
    spec.validate()?;
    let parts = spec.fractions.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for label in [Label::Normal, Label::Anomaly] {
        let mut idx = ds.indices_with(label);
        if idx.is_empty() {
            continue;
        }
        let counts = apportion(idx.len(), &spec.fractions);
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Split(format!(
                "part {k} would receive no {label:?} samples ({} available)",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::derived_rng(spec.seed, "split", label.as_int() as u64));
        let mut offset = 0;
        for (k, c) in counts.into_iter().enumerate() {
            members[k].extend_from_slice(&idx[offset..offset + c]);
            offset += c;
        }
    }
    Ok(members
        .into_iter()
        .map(|mut m| {
            m.sort_unstable();
            ds.subset(&m)
        })
        .collect())
}

const FIXED_COLUMNS: [&str; 3] = ["id", "label", "class"];

/// Reads a dataset from CSV with header `id,label,class,f0,...,f{d-1}`.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    read_csv(File::open(path)?, path)
}

pub fn read_csv(reader: impl Read, path: &Path) -> Result<FeatureDataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() <= FIXED_COLUMNS.len()
        || header.iter().take(3).ne(FIXED_COLUMNS.iter().copied())
    {
        return Err(Error::Schema(format!(
            "header must be `id,label,class,f0,...`, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let dim = header.len() - FIXED_COLUMNS.len();
    for (k, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{k}") {
            return Err(Error::Schema(format!("feature column {k} is named `{name}`, expected `f{k}`")));
        }
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        let label = record[1]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_int)
            .ok_or_else(|| parse_err(line, format!("label `{}` is not 0 or 1", &record[1])))?;
        let class_tag = (!record[2].is_empty()).then(|| record[2].to_string());
        let mut values = Vec::with_capacity(dim);
        for (k, field) in record.iter().skip(3).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("f{k}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("f{k} is not finite")));
            }
            values.push(v);
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!("duplicate sample id `{id}` on line {line}")));
        }
        samples.push(Sample {
            id,
            feature: FeatureVector(values),
            label,
            class_tag,
        });
    }
    FeatureDataset::new(dim, samples)
}

/// Writes `ds` in the ingestion format. Floats use the shortest repr that
/// parses back to the same bits.
pub fn write_csv(ds: &FeatureDataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.dim()).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(csv_io)?;
    for s in ds.samples() {
        let mut row = vec![
            s.id.clone(),
            s.label.as_int().to_string(),
            s.class_tag.clone().unwrap_or_default(),
        ];
        row.extend(s.feature.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_csv(ds, std::io::BufWriter::new(file))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Per-class sample counts keyed by class tag (untagged samples under "").
pub fn class_counts(ds: &FeatureDataset, label: Label) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for s in ds.samples().iter().filter(|s| s.label == label) {
        *out.entry(s.class_tag.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn toy(normals: usize, anomalies: usize) -> FeatureDataset {
        let mut samples = Vec::new();
        for i in 0..normals {
            samples.push(Sample::new(format!("n{i}"), vec![i as f64, 0.5], Label::Normal, None).unwrap());
        }
        for i in 0..anomalies {
            samples.push(
                Sample::new(format!("a{i}"), vec![-(i as f64), 3.0], Label::Anomaly, Some("x".into()))
                    .unwrap(),
            );
        }
        FeatureDataset::new(2, samples).unwrap()
    }

    fn parse(text: &str) -> Result<FeatureDataset> {
        read_csv(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn ingest_small_file() {
        let ds = parse("id,label,class,f0,f1\na,0,,1.0,2.0\nb,0,,0.5,-1\nc,1,scratch,9,9\n").unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.count(Label::Normal), 2);
        assert_eq!(ds.count(Label::Anomaly), 1);
        assert_eq!(ds.get(2).class_tag.as_deref(), Some("scratch"));
        assert_eq!(ds.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn missing_column_names_line() {
        let err = parse("id,label,class,f0,f1\na,0,,1.0\nb,0,,0.5,-1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_header_and_duplicates() {
        assert!(matches!(parse("id,label,class,f1\n"), Err(Error::Schema(_))));
        assert!(matches!(parse("id,label,f0\n"), Err(Error::Schema(_))));
        let dup = parse("id,label,class,f0\na,0,,1\na,1,,2\n").unwrap_err();
        assert!(matches!(dup, Error::Validation(_)));
        assert!(matches!(parse("id,label,class,f0\na,2,,1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("id,label,class,f0\na,0,,NaN\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn split_counts_follow_largest_remainder() {
        let ds = toy(8, 4);
        let spec = SplitSpec::new(3, vec![0.75, 0.25]).unwrap();
        let parts = stratified_split(&ds, &spec).unwrap();
        assert_eq!(
            (parts[0].count(Label::Normal), parts[0].count(Label::Anomaly)),
            (6, 3)
        );
        assert_eq!(
            (parts[1].count(Label::Normal), parts[1].count(Label::Anomaly)),
            (2, 1)
        );
        assert_eq!(parts, stratified_split(&ds, &spec).unwrap());
    }

    #[test]
    fn split_refuses_to_empty_a_class() {
        let ds = toy(8, 1);
        let spec = SplitSpec::new(0, vec![0.75, 0.25]).unwrap();
        assert!(matches!(stratified_split(&ds, &spec), Err(Error::Split(_))));
    }

    #[test]
    fn split_spec_validation() {
        assert!(SplitSpec::new(0, vec![0.5, 0.4]).is_err());
        assert!(SplitSpec::new(0, vec![1.2, -0.2]).is_err());
        assert!(SplitSpec::new(0, vec![]).is_err());
        assert!(SplitSpec::new(0, vec![1.0]).is_ok());
    }

    #[test]
    fn split_membership_over_many_seeds() {
        // 40 samples: union equals input and parts are disjoint, checked by
        // counting every id across parts.
        let ds = toy(30, 10);
        for seed in 0..100 {
            let spec = SplitSpec::new(seed, vec![0.5, 0.3, 0.2]).unwrap();
            let parts = stratified_split(&ds, &spec).unwrap();
            let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
            for p in &parts {
                for id in p.ids() {
                    *tally.entry(id).or_default() += 1;
                }
            }
            assert_eq!(tally.len(), ds.len(), "seed {seed}");
            assert!(tally.values().all(|&c| c == 1), "seed {seed}");
            for (p, f) in parts.iter().zip(&spec.fractions) {
                for label in [Label::Normal, Label::Anomaly] {
                    let want = f * ds.count(label) as f64;
                    assert!((p.count(label) as f64 - want).abs() <= 1.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bitwise(
            rows in prop::collection::vec(
                (prop::collection::vec(-1e6f64..1e6, 3), any::<bool>(), "[a-z ,]{0,6}"),
                1..40,
            )
        ) {
            let samples: Vec<Sample> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (v, anom, tag))| {
                    let label = if anom { Label::Anomaly } else { Label::Normal };
                    Sample::new(format!("s{i}"), v, label, (!tag.is_empty()).then_some(tag)).unwrap()
                })
                .collect();
            let ds = FeatureDataset::new(3, samples).unwrap();
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &ds);
            let ids: BTreeSet<_> = back.ids().collect();
            prop_assert_eq!(ids.len(), ds.len());
        }
    }
}
