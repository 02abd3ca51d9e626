//! Synthetic heterogeneous-anomaly benchmark and feature-space pseudo
//! anomaly synthesizers.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, FeatureVector, Label, Sample};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalComponent {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyComponent {
    pub class_tag: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

/// Axis-aligned Gaussian mixture with labeled normal modes and anomaly classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    pub normal_components: Vec<NormalComponent>,
    #[serde(default)]
    pub anomaly_components: Vec<AnomalyComponent>,
    pub seed: u64,
}

impl MixtureSpec {
    /// 16-d benchmark: three normal modes of 400 and four anomaly classes of
    /// 60, each a mode shifted along its own block of coordinates.
    pub fn default_benchmark(seed: u64) -> Self {
        const DIM: usize = 16;
        let unit = vec![1.0; DIM];
        let mode_mean = |c: usize| {
            let mut m = vec![0.0; DIM];
            m[2 * c] = 3.0;
            m[2 * c + 1] = 3.0;
            m
        };
        let shifted = |base: usize, dims: &[usize], by: f64| {
            let mut m = mode_mean(base);
            for &d in dims {
                m[d] += by;
            }
            m
        };
        let normal_components = (0..3)
            .map(|c| NormalComponent {
                mean: mode_mean(c),
                std: unit.clone(),
                count: 400,
            })
            .collect();
        let anomaly_components = vec![
            AnomalyComponent {
                class_tag: "shift_up".into(),
                mean: shifted(0, &[8, 9], 4.0),
                std: unit.clone(),
                count: 60,
            },
            AnomalyComponent {
                class_tag: "shift_down".into(),
                mean: shifted(1, &[10, 11], -4.0),
                std: unit.clone(),
                count: 60,
            },
            AnomalyComponent {
                class_tag: "side_shift".into(),
                mean: shifted(2, &[6, 7], 4.0),
                std: unit.clone(),
                count: 60,
            },
            AnomalyComponent {
                class_tag: "wide_shift".into(),
                mean: shifted(0, &[12, 13, 14, 15], 3.0),
                std: unit,
                count: 60,
            },
        ];
        Self {
            dim: DIM,
            normal_components,
            anomaly_components,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: String, msg: &str| Err(Error::config(field, msg));
        if self.dim == 0 {
            return bad("dim".into(), "must be positive");
        }
        if self.normal_components.is_empty() {
            return bad("normal_components".into(), "at least one normal component required");
        }
        let check = |prefix: String, mean: &[f64], std: &[f64], count: usize| -> Result<()> {
            if mean.len() != self.dim {
                return bad(format!("{prefix}.mean"), "length must equal dim");
            }
            if std.len() != self.dim {
                return bad(format!("{prefix}.std"), "length must equal dim");
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return bad(format!("{prefix}.mean"), "values must be finite");
            }
            if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("{prefix}.std"), "values must be finite and > 0");
            }
            if count == 0 {
                return bad(format!("{prefix}.count"), "must be at least 1");
            }
            Ok(())
        };
        for (i, c) in self.normal_components.iter().enumerate() {
            check(format!("normal_components[{i}]"), &c.mean, &c.std, c.count)?;
        }
        let mut tags = std::collections::HashSet::new();
        for (i, c) in self.anomaly_components.iter().enumerate() {
            check(format!("anomaly_components[{i}]"), &c.mean, &c.std, c.count)?;
            if c.class_tag.is_empty() {
                return bad(format!("anomaly_components[{i}].class_tag"), "must be non-empty");
            }
            if !tags.insert(c.class_tag.as_str()) {
                return bad(format!("anomaly_components[{i}].class_tag"), "duplicate class tag");
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut rng::Rng, mean: &[f64], std: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(std)
        .map(|(&m, &s)| Normal::new(m, s).expect("validated std").sample(rng))
        .collect()
}

/// Samples the mixture. Normals come first, component by component.
pub fn generate(spec: &MixtureSpec) -> Result<FeatureDataset> {
    spec.validate()?;
    let mut samples = Vec::new();
    for (c, comp) in spec.normal_components.iter().enumerate() {
        let mut r = rng::derived_rng(spec.seed, "normal-component", c as u64);
        for k in 0..comp.count {
            samples.push(Sample::new(
                format!("n{c}-{k}"),
                draw(&mut r, &comp.mean, &comp.std),
                Label::Normal,
                Some(format!("mode{c}")),
            )?);
        }
    }
    for (c, comp) in spec.anomaly_components.iter().enumerate() {
        let mut r = rng::derived_rng(spec.seed, "anomaly-component", c as u64);
        for k in 0..comp.count {
            samples.push(Sample::new(
                format!("a-{}-{k}", comp.class_tag),
                draw(&mut r, &comp.mean, &comp.std),
                Label::Anomaly,
                Some(comp.class_tag.clone()),
            )?);
        }
    }
    FeatureDataset::new(spec.dim, samples)
}

/// Copy of `ds` with every feature shifted by `offset`, ids prefixed.
pub fn shifted_copy(ds: &FeatureDataset, offset: f64, id_prefix: &str) -> Result<FeatureDataset> {
    let samples = ds
        .samples()
        .iter()
        .map(|s| {
            Sample::new(
                format!("{id_prefix}{}", s.id),
                s.feature.iter().map(|v| v + offset).collect(),
                s.label,
                s.class_tag.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureDataset::new(ds.dim(), samples)
}

/// Feature-space pseudo-anomaly generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PseudoKind {
    /// Convex blend of a normal and a donor (CutMix analogue).
    MixBlend,
    /// Contiguous block transplanted from the donor (CutPaste analogue).
    SegmentSwap,
    /// Contiguous block corrupted with Gaussian noise (DRAEM mask analogue).
    NoiseMask,
}

impl PseudoKind {
    pub const ALL: [PseudoKind; 3] = [PseudoKind::MixBlend, PseudoKind::SegmentSwap, PseudoKind::NoiseMask];

    pub fn name(self) -> &'static str {
        match self {
            PseudoKind::MixBlend => "mix_blend",
            PseudoKind::SegmentSwap => "segment_swap",
            PseudoKind::NoiseMask => "noise_mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoAnomalyRecipe {
    pub kind: PseudoKind,
    /// Blend weight on the normal (MixBlend).
    pub lambda: f64,
    /// Fraction of coordinates in the active block (SegmentSwap, NoiseMask).
    pub rho: f64,
    /// Noise scale (NoiseMask).
    pub sigma: f64,
    pub seed: u64,
}

impl PseudoAnomalyRecipe {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            PseudoKind::MixBlend => (0.0..=1.0).contains(&self.lambda),
            PseudoKind::SegmentSwap => self.rho > 0.0 && self.rho <= 1.0,
            PseudoKind::NoiseMask => self.rho > 0.0 && self.rho <= 1.0 && self.sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("recipe parameters out of range: {self:?}")))
        }
    }

    /// Contiguous block `[start, start + ⌈ρ·d⌉)` chosen from the recipe seed.
    pub fn block(&self, dim: usize) -> std::ops::Range<usize> {
        let len = ((self.rho * dim as f64).ceil() as usize).clamp(1, dim);
        let start = rng::derived_rng(self.seed, "block", 0).random_range(0..=dim - len);
        start..start + len
    }
}

/// Default per-call parameter distribution for pseudo anomalies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoSettings {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl Default for PseudoSettings {
    fn default() -> Self {
        Self {
            lambda_min: 0.3,
            lambda_max: 0.7,
            rho: 0.25,
            sigma: 2.0,
        }
    }
}

impl PseudoSettings {
    pub fn recipe(&self, kind: PseudoKind, seed: u64) -> PseudoAnomalyRecipe {
        let lambda = rng::derived_rng(seed, "lambda", 0).random_range(self.lambda_min..=self.lambda_max);
        PseudoAnomalyRecipe {
            kind,
            lambda,
            rho: self.rho,
            sigma: self.sigma,
            seed,
        }
    }
}

/// Corrupts `normal` according to `recipe`, using `donor` where the recipe
/// needs a second sample. Coordinates outside the active block are copied.
pub fn synthesize_pseudo(
    normal: &FeatureVector,
    donor: &FeatureVector,
    recipe: &PseudoAnomalyRecipe,
) -> Result<FeatureVector> {
    if normal.dim() != donor.dim() {
        return Err(Error::Shape {
            expected: normal.dim(),
            got: donor.dim(),
        });
    }
    recipe.validate()?;
    let mut out = normal.as_slice().to_vec();
    match recipe.kind {
        PseudoKind::MixBlend => {
            let l = recipe.lambda;
            for (o, (&a, &b)) in out.iter_mut().zip(normal.iter().zip(donor.iter())) {
                // Rounding in l·a + (1−l)·b can step one ulp outside the segment.
                *o = (l * a + (1.0 - l) * b).clamp(a.min(b), a.max(b));
            }
        }
        PseudoKind::SegmentSwap => {
            let block = recipe.block(out.len());
            out[block.clone()].copy_from_slice(&donor[block]);
        }
        PseudoKind::NoiseMask => {
            let block = recipe.block(out.len());
            let mut r = rng::derived_rng(recipe.seed, "noise", 0);
            for v in &mut out[block] {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += recipe.sigma * z;
            }
        }
    }
    FeatureVector::new(out)
}
