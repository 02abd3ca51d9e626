use std::collections::VecDeque;

/// Rolling per-sample buffers of the last `K` base-score vectors, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistory {
    capacity: usize,
    width: usize,
    buffers: Vec<VecDeque<Vec<f64>>>,
    /// Epoch at which each stored vector was produced, shared by all samples.
    epochs: VecDeque<usize>,
}

impl ScoreHistory {
    pub fn new(samples: usize, capacity: usize, width: usize) -> Self {
        Self {
            capacity,
            width,
            buffers: vec![VecDeque::with_capacity(capacity); samples],
            epochs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> usize {
        self.buffers.len()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity
    }

    pub fn epochs(&self) -> impl Iterator<Item = usize> + '_ {
        self.epochs.iter().copied()
    }

    /// Appends one epoch of score vectors (one per sample, each `width` long).
    pub fn push(&mut self, epoch: usize, scores: &[Vec<f64>]) {
        assert_eq!(scores.len(), self.buffers.len(), "one score vector per sample");
        for (buf, s) in self.buffers.iter_mut().zip(scores) {
            assert_eq!(s.len(), self.width, "score vector width");
            if buf.len() == self.capacity {
                buf.pop_front();
            }
            buf.push_back(s.clone());
        }
        if self.epochs.len() == self.capacity {
            self.epochs.pop_front();
        }
        self.epochs.push_back(epoch);
    }

    pub fn window(&self, sample: usize) -> Vec<Vec<f64>> {
        self.buffers[sample].iter().cloned().collect()
    }
}
