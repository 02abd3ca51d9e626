use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, Label};
use crate::error::{Error, Result};
use crate::rng;

/// Partition of a dataset's normal samples into `k` clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignments.values() {
            sizes[c] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Independent seeded runs; the lowest-SSE run wins.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            n_init: 5,
        }
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, the rest drawn ∝ squared
/// distance to the closest chosen centre.
fn seed_centroids(points: &[&[f64]], k: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[r.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = r.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            r.random_range(0..points.len())
        };
        centroids.push(points[pick].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn means(points: &[&[f64]], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[&[f64]], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&c| sizes[c] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(points[a], &centroids[labels[a]]);
                let db = sq_dist(points[b], &centroids[labels[b]]);
                // Prefer the lower index on ties.
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("at least k points");
        labels[donor] = empty;
        centroids[empty] = points[donor].to_vec();
    }
}

/// Lloyd's algorithm over the normal samples of `ds`.
pub fn kmeans(ds: &FeatureDataset, k: usize, seed: u64, cfg: KMeansConfig) -> Result<ClusterAssignment> {
    let normals = ds.normal_indices();
    if k == 0 {
        return Err(Error::config("train.C", "must be at least 1"));
    }
    if normals.len() < k {
        return Err(Error::Capacity {
            need: k,
            got: normals.len(),
        });
    }
    let points: Vec<&[f64]> = normals.iter().map(|&i| ds.get(i).feature.as_slice()).collect();
    let mut best: Option<(f64, Fit)> = None;
    for run in 0..cfg.n_init.max(1) {
        let fit = lloyd(&points, k, rng::derive(seed, "kmeans-run", run as u64), cfg);
        let cost = sse(&points, &fit.0, &fit.1);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, fit));
        }
    }
    let (labels, centroids, iterations) = best.expect("at least one run").1;
    let assignments = normals
        .iter()
        .zip(&labels)
        .map(|(&i, &c)| {
            debug_assert_eq!(ds.get(i).label, Label::Normal);
            (ds.get(i).id.clone(), c)
        })
        .collect();
    Ok(ClusterAssignment {
        k,
        assignments,
        centroids,
        iterations,
    })
}

/// Labels, centroids and iteration count of one Lloyd run.
type Fit = (Vec<usize>, Vec<Vec<f64>>, usize);

fn lloyd(points: &[&[f64]], k: usize, seed: u64, cfg: KMeansConfig) -> Fit {
    let dim = points[0].len();
    let mut r = rng::derived_rng(seed, "kmeans", 0);
    let mut centroids = seed_centroids(points, k, &mut r);
    let mut labels = vec![0usize; points.len()];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids).0;
        }
        repair_empty(points, &mut labels, &mut centroids);
        let updated = means(points, &labels, k, dim);
        let shift = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < cfg.tol {
            break;
        }
    }
    (labels, centroids, iterations)
}

/// Within-cluster sum of squared distances.
pub fn sse(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &c)| sq_dist(p, &centroids[c])).sum()
}
