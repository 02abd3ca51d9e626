use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng;

use super::{class_counts, PointLoss, Reduction};

/// One-hidden-layer rectifier network producing a scalar anomaly score.
///
/// Parameters are stored flat as `[W1 (hidden×input, row-major), b1, w2, b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerNet {
    input: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl ScorerNet {
    pub fn param_count(input: usize, hidden: usize) -> usize {
        input * hidden + hidden + hidden + 1
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            params: vec![0.0; Self::param_count(input, hidden)],
        }
    }

    /// Uniform init in ±1/√fan_in per layer.
    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let mut net = Self::zeros(input, hidden);
        let mut r = rng::rng(seed);
        let b1 = 1.0 / (input as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let first = input * hidden + hidden;
        for (k, p) in net.params.iter_mut().enumerate() {
            let bound = if k < first { b1 } else { b2 };
            *p = r.random_range(-bound..=bound);
        }
        net
    }

    pub fn from_params(input: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let want = Self::param_count(input, hidden);
        if params.len() != want {
            return Err(Error::Shape {
                expected: want,
                got: params.len(),
            });
        }
        Ok(Self { input, hidden, params })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_architecture(&self, other: &ScorerNet) -> bool {
        self.input == other.input && self.hidden == other.hidden
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let (w1, rest) = self.params.split_at(self.input * self.hidden);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden);
        (w1, b1, w2, b2[0])
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::Shape {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.score(x))
    }

    /// Forward pass without the dimension check.
    pub fn score(&self, x: &[f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split();
        let mut out = b2;
        for j in 0..self.hidden {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let z = b1[j] + dot(row, x);
            if z > 0.0 {
                out += w2[j] * z;
            }
        }
        out
    }

    /// Adds `slope · ∂score/∂θ` at `x` into `grad`.
    pub fn accumulate_grad(&self, x: &[f64], slope: f64, grad: &mut [f64]) {
        let (w1, b1, w2, _) = self.split();
        let (gw1, rest) = grad.split_at_mut(self.input * self.hidden);
        let (gb1, rest) = rest.split_at_mut(self.hidden);
        let (gw2, gb2) = rest.split_at_mut(self.hidden);
        gb2[0] += slope;
        for j in 0..self.hidden {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let z = b1[j] + dot(row, x);
            if z > 0.0 {
                gw2[j] += slope * z;
                let dz = slope * w2[j];
                gb1[j] += dz;
                for (g, &xk) in gw1[j * self.input..(j + 1) * self.input].iter_mut().zip(x) {
                    *g += dz * xk;
                }
            }
        }
    }

    /// Reduced loss over `batch` and its exact gradient with respect to θ.
    pub fn loss_and_grad<L: PointLoss + ?Sized>(
        &self,
        batch: &[&Sample],
        loss: &L,
        reduction: Reduction,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Contract("gradient of an empty batch".into()));
        }
        let (normals, anomalies) = class_counts(batch.iter().map(|s| &s.label));
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for s in batch {
            self.check_dim(&s.feature)?;
            let score = self.score(&s.feature);
            let (value, slope) = loss.value_and_slope(score, s.label);
            if !value.is_finite() || !slope.is_finite() {
                return Err(Error::Numeric {
                    sample: s.id.clone(),
                    what: format!("loss {value} (score {score})"),
                });
            }
            let scale = reduction.sample_scale(s.label, normals, anomalies);
            total += value * scale;
            self.accumulate_grad(&s.feature, slope * scale, &mut grad);
        }
        Ok((total, grad))
    }

    /// Reduced loss without the gradient.
    pub fn loss<L: PointLoss + ?Sized>(&self, batch: &[&Sample], loss: &L, reduction: Reduction) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("loss of an empty batch".into()));
        }
        let (normals, anomalies) = class_counts(batch.iter().map(|s| &s.label));
        let mut total = 0.0;
        for s in batch {
            self.check_dim(&s.feature)?;
            let value = loss.value_and_slope(self.score(&s.feature), s.label).0;
            total += value * reduction.sample_scale(s.label, normals, anomalies);
        }
        Ok(total)
    }

    pub fn scores<'a>(&self, xs: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
        xs.into_iter().map(|x| self.score(x)).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
