use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, Label, Sample};
use crate::error::{Error, Result};
use crate::rng;
use crate::synthgen::{synthesize_pseudo, PseudoKind, PseudoSettings};

use super::ClusterAssignment;

/// Which normals feed one side of a distribution dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalSource {
    Cluster(usize),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyMode {
    /// A single labeled anomaly, shared by support and query.
    OneShot,
    /// Half the labeled anomalies are virtually seen, the rest unseen.
    FewShot,
}

impl AnomalyMode {
    pub fn for_count(m: usize) -> Self {
        if m <= 1 {
            AnomalyMode::OneShot
        } else {
            AnomalyMode::FewShot
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HadgConfig {
    pub strict_openness: bool,
    /// Pseudo anomalies per side; `None` matches the real support anomaly count.
    pub pseudo_per_subset: Option<usize>,
    pub pseudo: PseudoSettings,
    pub recipes: Vec<PseudoKind>,
}

impl Default for HadgConfig {
    fn default() -> Self {
        Self {
            strict_openness: false,
            pseudo_per_subset: None,
            pseudo: PseudoSettings::default(),
            recipes: PseudoKind::ALL.to_vec(),
        }
    }
}

/// One simulated anomaly distribution. All indices point into
/// [`DistributionSet::pool`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionDataset {
    pub index: usize,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub support_normal_source: NormalSource,
    pub query_normal_source: NormalSource,
    pub support_pseudo_kind: PseudoKind,
    pub query_pseudo_kind: PseudoKind,
    pub virtual_seen: Vec<usize>,
    pub virtual_unseen: Vec<usize>,
    /// Normals of the support set (X_{n,i}).
    pub support_normals: Vec<usize>,
}

impl DistributionDataset {
    pub fn support_anomalies<'a>(&'a self, pool: &'a FeatureDataset) -> impl Iterator<Item = usize> + 'a {
        self.support.iter().copied().filter(|&j| pool.get(j).label == Label::Anomaly)
    }

    pub fn query_anomalies<'a>(&'a self, pool: &'a FeatureDataset) -> impl Iterator<Item = usize> + 'a {
        self.query.iter().copied().filter(|&j| pool.get(j).label == Label::Anomaly)
    }

    pub fn support_samples<'a>(&self, pool: &'a FeatureDataset) -> Vec<&'a Sample> {
        self.support.iter().map(|&j| pool.get(j)).collect()
    }

    pub fn query_samples<'a>(&self, pool: &'a FeatureDataset) -> Vec<&'a Sample> {
        self.query.iter().map(|&j| pool.get(j)).collect()
    }

    /// Checks the structural guarantees of a clustered subset.
    pub fn validate(&self, pool: &FeatureDataset, strict_openness: bool) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(format!("subset {}: {m}", self.index)));
        let all = self.support_normal_source == NormalSource::All;
        if all != (self.query_normal_source == NormalSource::All) {
            return fail("only one side draws from all normals".into());
        }
        if !all && self.support_normal_source == self.query_normal_source {
            return fail("support and query share a normal cluster".into());
        }
        if self.support_pseudo_kind == self.query_pseudo_kind {
            return fail("support and query use the same pseudo-anomaly recipe".into());
        }
        let support: BTreeSet<usize> = self.support.iter().copied().collect();
        let query: BTreeSet<usize> = self.query.iter().copied().collect();
        let seen: BTreeSet<usize> = self.virtual_seen.iter().copied().collect();
        if self.virtual_unseen.iter().any(|j| seen.contains(j)) {
            return fail("virtual seen and unseen overlap".into());
        }
        if self.virtual_unseen.iter().any(|j| !query.contains(j)) {
            return fail("virtual unseen anomaly missing from query".into());
        }
        if self.virtual_unseen.iter().any(|j| support.contains(j)) {
            return fail("virtual unseen anomaly present in support".into());
        }
        if support.intersection(&query).any(|&j| pool.get(j).label == Label::Normal) {
            return fail("a normal sample sits in both support and query".into());
        }
        if strict_openness && support.intersection(&query).next().is_some() {
            return fail("support and query anomalies overlap under strict openness".into());
        }
        Ok(())
    }
}

/// The training pool (real samples followed by generated pseudo anomalies)
/// and the distribution datasets over it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSet {
    pub pool: FeatureDataset,
    pub subsets: Vec<DistributionDataset>,
    /// Number of leading pool entries that are real training samples.
    pub real_count: usize,
}

impl DistributionSet {
    pub fn validate(&self, strict_openness: bool) -> Result<()> {
        self.subsets.iter().try_for_each(|s| s.validate(&self.pool, strict_openness))
    }

    /// Pool indices that occur in at least one support or query set.
    pub fn used_indices(&self) -> Vec<usize> {
        let mut used: BTreeSet<usize> = BTreeSet::new();
        for s in &self.subsets {
            used.extend(&s.support);
            used.extend(&s.query);
        }
        used.into_iter().collect()
    }

    pub fn manifest(&self) -> SubsetManifest {
        let ids = |v: &[usize]| v.iter().map(|&j| self.pool.get(j).id.clone()).collect();
        SubsetManifest {
            pseudo_ids: self.pool.samples()[self.real_count..].iter().map(|s| s.id.clone()).collect(),
            subsets: self
                .subsets
                .iter()
                .map(|s| SubsetRecord {
                    index: s.index,
                    support: ids(&s.support),
                    query: ids(&s.query),
                    support_normal_source: s.support_normal_source,
                    query_normal_source: s.query_normal_source,
                    support_pseudo_kind: s.support_pseudo_kind,
                    query_pseudo_kind: s.query_pseudo_kind,
                    virtual_seen: ids(&s.virtual_seen),
                    virtual_unseen: ids(&s.virtual_unseen),
                })
                .collect(),
        }
    }
}

/// Serializable record of every subset's membership, by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub pseudo_ids: Vec<String>,
    pub subsets: Vec<SubsetRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecord {
    pub index: usize,
    pub support: Vec<String>,
    pub query: Vec<String>,
    pub support_normal_source: NormalSource,
    pub query_normal_source: NormalSource,
    pub support_pseudo_kind: PseudoKind,
    pub query_pseudo_kind: PseudoKind,
    pub virtual_seen: Vec<String>,
    pub virtual_unseen: Vec<String>,
}

struct PseudoBuilder<'a> {
    ds: &'a FeatureDataset,
    normals: &'a [usize],
    settings: &'a PseudoSettings,
    samples: Vec<Sample>,
}

impl PseudoBuilder<'_> {
    /// Adds `count` pseudo anomalies built on `bases`, returning pool indices.
    fn inject(
        &mut self,
        subset: usize,
        side: &str,
        kind: PseudoKind,
        bases: &[usize],
        count: usize,
        seed: u64,
    ) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let s = rng::derive(seed, side, k as u64);
            let mut r = rng::rng(s);
            let base = *bases.choose(&mut r).expect("non-empty side");
            let donor = *self.normals.choose(&mut r).expect("non-empty normals");
            let recipe = self.settings.recipe(kind, rng::derive(s, "recipe", 0));
            let feature = synthesize_pseudo(&self.ds.get(base).feature, &self.ds.get(donor).feature, &recipe)?;
            out.push(self.ds.len() + self.samples.len());
            self.samples.push(Sample {
                id: format!("pseudo-{subset}-{side}-{k}"),
                feature,
                label: Label::Anomaly,
                class_tag: Some(format!("pseudo:{}", kind.name())),
            });
        }
        Ok(out)
    }

    fn finish(self, subsets: Vec<DistributionDataset>) -> Result<DistributionSet> {
        let real_count = self.ds.len();
        let mut samples = self.ds.samples().to_vec();
        samples.extend(self.samples);
        Ok(DistributionSet {
            pool: FeatureDataset::new(self.ds.dim(), samples)?,
            subsets,
            real_count,
        })
    }
}

fn split_anomalies(anomalies: &[usize], mode: AnomalyMode, r: &mut rng::Rng) -> (Vec<usize>, Vec<usize>) {
    match mode {
        AnomalyMode::OneShot => (anomalies.to_vec(), Vec::new()),
        AnomalyMode::FewShot => {
            let mut shuffled = anomalies.to_vec();
            shuffled.shuffle(r);
            let seen = (anomalies.len() / 2).max(1).min(anomalies.len());
            let unseen = shuffled.split_off(seen);
            shuffled.sort_unstable();
            let mut unseen = unseen;
            unseen.sort_unstable();
            (shuffled, unseen)
        }
    }
}

/// Builds `t` distribution datasets: `t − 1` pair each support with one
/// normal cluster and query with another; the last splits all normals in
/// half. Labeled anomalies are split into virtually seen (support, and query
/// unless `strict_openness`) and virtually unseen (query only); each side
/// also receives pseudo anomalies from its own recipe.
pub fn build_distributions(
    ds: &FeatureDataset,
    clusters: &ClusterAssignment,
    t: usize,
    mode: AnomalyMode,
    cfg: &HadgConfig,
    seed: u64,
) -> Result<DistributionSet> {
    if t == 0 {
        return Err(Error::config("train.T", "must be at least 1"));
    }
    if t > 1 && clusters.k < 2 {
        return Err(Error::config("train.C", "need at least 2 normal clusters when T > 1"));
    }
    let kinds: Vec<PseudoKind> = cfg.recipes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if kinds.len() < 2 {
        return Err(Error::config("hadg.recipes", "need at least two distinct pseudo-anomaly recipes"));
    }
    let normals = ds.normal_indices();
    let anomalies = ds.anomaly_indices();
    if anomalies.is_empty() {
        return Err(Error::Validation("training data has no labeled anomaly".into()));
    }
    let mut by_cluster = vec![Vec::new(); clusters.k];
    for &j in &normals {
        let c = clusters
            .cluster_of(&ds.get(j).id)
            .ok_or_else(|| Error::Contract(format!("normal `{}` has no cluster", ds.get(j).id)))?;
        by_cluster[c].push(j);
    }
    if by_cluster.iter().any(|m| m.is_empty()) {
        return Err(Error::Contract("cluster assignment has an empty cluster".into()));
    }

    let mut builder = PseudoBuilder {
        ds,
        normals: &normals,
        settings: &cfg.pseudo,
        samples: Vec::new(),
    };
    let mut subsets = Vec::with_capacity(t);
    for i in 0..t {
        let sub_seed = rng::derive(seed, "subset", i as u64);
        let mut r = rng::rng(sub_seed);
        let (support_src, query_src, mut support_normals, mut query_normals) = if i + 1 < t {
            let a = r.random_range(0..clusters.k);
            let mut b = r.random_range(0..clusters.k - 1);
            if b >= a {
                b += 1;
            }
            let (s, q) = if r.random::<bool>() { (a, b) } else { (b, a) };
            (NormalSource::Cluster(s), NormalSource::Cluster(q), by_cluster[s].clone(), by_cluster[q].clone())
        } else {
            let mut all = normals.clone();
            all.shuffle(&mut r);
            let query = all.split_off(all.len().div_ceil(2));
            (NormalSource::All, NormalSource::All, all, query)
        };
        support_normals.sort_unstable();
        query_normals.sort_unstable();

        let (virtual_seen, virtual_unseen) = split_anomalies(&anomalies, mode, &mut r);
        let mut picked = kinds.clone();
        picked.shuffle(&mut r);
        let (support_kind, query_kind) = (picked[0], picked[1]);

        let pseudo_count = cfg.pseudo_per_subset.unwrap_or(virtual_seen.len());
        let support_pseudo = builder.inject(i, "s", support_kind, &support_normals, pseudo_count, sub_seed)?;
        let query_pseudo = builder.inject(i, "q", query_kind, &query_normals, pseudo_count, sub_seed)?;

        let mut support = support_normals.clone();
        support.extend(&virtual_seen);
        support.extend(&support_pseudo);
        let mut query = query_normals;
        if !cfg.strict_openness {
            query.extend(&virtual_seen);
        }
        query.extend(&virtual_unseen);
        query.extend(&query_pseudo);

        subsets.push(DistributionDataset {
            index: i,
            support,
            query,
            support_normal_source: support_src,
            query_normal_source: query_src,
            support_pseudo_kind: support_kind,
            query_pseudo_kind: query_kind,
            virtual_seen,
            virtual_unseen,
            support_normals,
        });
    }
    builder.finish(subsets)
}

/// Unstructured control: every subset is a uniform random half/half split of
/// all normals and labeled anomalies, with one pseudo-anomaly recipe shared
/// by both sides. No clustering and no openness guarantees.
pub fn build_random_subsets(
    ds: &FeatureDataset,
    t: usize,
    cfg: &HadgConfig,
    seed: u64,
) -> Result<DistributionSet> {
    if t == 0 {
        return Err(Error::config("train.T", "must be at least 1"));
    }
    if cfg.recipes.is_empty() {
        return Err(Error::config("hadg.recipes", "need at least one pseudo-anomaly recipe"));
    }
    let normals = ds.normal_indices();
    let anomalies = ds.anomaly_indices();
    if anomalies.is_empty() {
        return Err(Error::Validation("training data has no labeled anomaly".into()));
    }
    if normals.len() < 2 {
        return Err(Error::Capacity {
            need: 2,
            got: normals.len(),
        });
    }
    let mut builder = PseudoBuilder {
        ds,
        normals: &normals,
        settings: &cfg.pseudo,
        samples: Vec::new(),
    };
    let mut subsets = Vec::with_capacity(t);
    for i in 0..t {
        let sub_seed = rng::derive(seed, "random-subset", i as u64);
        let mut r = rng::rng(sub_seed);
        let mut ns = normals.clone();
        ns.shuffle(&mut r);
        let mut qn = ns.split_off(ns.len().div_ceil(2));
        ns.sort_unstable();
        qn.sort_unstable();
        let mut an = anomalies.clone();
        an.shuffle(&mut r);
        let (sa, qa) = if an.len() == 1 {
            (an.clone(), an.clone())
        } else {
            let qa = an.split_off(an.len().div_ceil(2));
            (an, qa)
        };
        let kind = *cfg.recipes.choose(&mut r).expect("non-empty recipes");
        let count = cfg.pseudo_per_subset.unwrap_or(sa.len());
        let sp = builder.inject(i, "s", kind, &ns, count, sub_seed)?;
        let qp = builder.inject(i, "q", kind, &qn, count, sub_seed)?;
        let mut support = ns.clone();
        support.extend(&sa);
        support.extend(&sp);
        let mut query = qn.clone();
        query.extend(&qa);
        query.extend(&qp);
        subsets.push(DistributionDataset {
            index: i,
            support,
            query,
            support_normal_source: NormalSource::All,
            query_normal_source: NormalSource::All,
            support_pseudo_kind: kind,
            query_pseudo_kind: kind,
            virtual_seen: sa,
            virtual_unseen: Vec::new(),
            support_normals: ns,
        });
    }
    builder.finish(subsets)
}
