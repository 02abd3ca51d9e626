//! Small differentiable networks with hand-written reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod scorer;

use serde::{Deserialize, Serialize};

use crate::data::Label;

pub use adam::{AdamState, Optimizer};
pub use checkpoint::{read_checkpoint, write_checkpoint, Architecture};
pub use lstm::SequencePredictorNet;
pub use scorer::ScorerNet;

/// A per-sample loss on a scalar score: returns the value and its derivative
/// with respect to the score.
pub trait PointLoss {
    fn value_and_slope(&self, score: f64, label: Label) -> (f64, f64);
}

/// How per-sample losses in a batch are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
    /// Mean over normals and mean over anomalies, averaged; a batch holding
    /// one class reduces to its plain mean.
    #[default]
    Balanced,
}

impl Reduction {
    /// Weight of one sample of class `label` in a batch with these class counts.
    pub fn sample_scale(self, label: Label, normals: usize, anomalies: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / (normals + anomalies) as f64,
            Reduction::Balanced => {
                let own = if label.is_anomaly() { anomalies } else { normals };
                if normals == 0 || anomalies == 0 {
                    1.0 / own as f64
                } else {
                    0.5 / own as f64
                }
            }
        }
    }
}

pub(crate) fn class_counts<'a>(labels: impl IntoIterator<Item = &'a Label>) -> (usize, usize) {
    labels.into_iter().fold((0, 0), |(n, a), l| if l.is_anomaly() { (n, a + 1) } else { (n + 1, a) })
}
