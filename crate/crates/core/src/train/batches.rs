use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::Rng;

/// Minibatches of `batch` pool indices, half normal and half anomalous.
///
/// Normals are dealt from a shuffled permutation (wrapping around); the
/// anomalous half is drawn with replacement. When one side is empty the
/// whole batch is drawn from the other.
pub fn balanced_batches(
    normals: &[usize],
    anomalies: &[usize],
    batch: usize,
    steps: usize,
    r: &mut Rng,
) -> Vec<Vec<usize>> {
    let mut order = normals.to_vec();
    order.shuffle(r);
    let (n_half, a_half) = match (normals.is_empty(), anomalies.is_empty()) {
        (true, true) => return Vec::new(),
        (true, false) => (0, batch),
        (false, true) => (batch, 0),
        (false, false) => (batch / 2, batch - batch / 2),
    };
    let mut cursor = 0;
    (0..steps)
        .map(|_| {
            let mut b = Vec::with_capacity(batch);
            for _ in 0..n_half {
                b.push(order[cursor % order.len()]);
                cursor += 1;
            }
            for _ in 0..a_half {
                b.push(anomalies[r.random_range(0..anomalies.len())]);
            }
            b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn halves_and_determinism() {
        let normals: Vec<usize> = (0..100).collect();
        let anomalies = vec![500, 501];
        let b = balanced_batches(&normals, &anomalies, 32, 4, &mut rng::rng(1));
        assert_eq!(b.len(), 4);
        for batch in &b {
            assert_eq!(batch.len(), 32);
            assert_eq!(batch.iter().filter(|&&j| j >= 500).count(), 16);
        }
        assert_eq!(b, balanced_batches(&normals, &anomalies, 32, 4, &mut rng::rng(1)));
        let only_normals = balanced_batches(&normals, &[], 8, 2, &mut rng::rng(1));
        assert!(only_normals.iter().flatten().all(|&j| j < 100));
    }
}
