use crate::data::Label;
use crate::error::{Error, Result};

/// Area under the ROC curve as the Mann–Whitney statistic with midranks.
///
/// Ranks are kept doubled so the statistic is an exact integer ratio; the
/// result is bitwise identical to counting pairwise wins plus half-ties.
pub fn auc(scored: &[(f64, Label)]) -> Result<f64> {
    if let Some((s, _)) = scored.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::Numeric {
            sample: String::from("<auc input>"),
            what: format!("score {s}"),
        });
    }
    let positives = scored.iter().filter(|(_, l)| l.is_anomaly()).count() as u128;
    let negatives = scored.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes, got {positives} anomalies and {negatives} normals"
        )));
    }
    let mut order: Vec<&(f64, Label)> = scored.iter().collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum over anomalies of 2·midrank (1-based).
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0usize;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && order[end].0 == order[start].0 {
            end += 1;
        }
        let group = (end - start) as u128;
        let doubled_midrank = 2 * start as u128 + group + 1;
        let hits = order[start..end].iter().filter(|(_, l)| l.is_anomaly()).count() as u128;
        doubled_rank_sum += hits * doubled_midrank;
        start = end;
    }
    let doubled_u = doubled_rank_sum - positives * (positives + 1);
    Ok(doubled_u as f64 / (2 * positives * negatives) as f64)
}

/// [`auc`] for separately held normal and anomaly scores.
pub fn auc_of(normal: &[f64], anomalous: &[f64]) -> Result<f64> {
    let scored: Vec<(f64, Label)> = normal
        .iter()
        .map(|&s| (s, Label::Normal))
        .chain(anomalous.iter().map(|&s| (s, Label::Anomaly)))
        .collect();
    auc(&scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(scored: &[(f64, Label)]) -> f64 {
        let mut doubled = 0u128;
        let mut pairs = 0u128;
        for (a, la) in scored {
            if !la.is_anomaly() {
                continue;
            }
            for (n, ln) in scored {
                if ln.is_anomaly() {
                    continue;
                }
                pairs += 1;
                doubled += if a > n { 2 } else if a == n { 1 } else { 0 };
            }
        }
        doubled as f64 / (2 * pairs) as f64
    }

    #[test]
    fn known_values() {
        use Label::*;
        assert_eq!(auc(&[(0.1, Normal), (0.4, Normal), (0.3, Anomaly), (0.9, Anomaly)]).unwrap(), 0.75);
        assert_eq!(auc(&[(0.0, Normal), (1.0, Anomaly), (2.0, Anomaly)]).unwrap(), 1.0);
        assert_eq!(auc(&[(0.5, Normal), (0.5, Anomaly), (0.5, Normal)]).unwrap(), 0.5);
        assert!(matches!(auc(&[(0.5, Normal)]), Err(Error::UndefinedMetric(_))));
        assert!(auc(&[(f64::NAN, Normal), (1.0, Anomaly)]).is_err());
    }

    fn instance() -> impl Strategy<Value = Vec<(f64, Label)>> {
        (1usize..100, 1usize..100).prop_flat_map(|(p, n)| {
            let pos = prop::collection::vec(0i32..20, p);
            let neg = prop::collection::vec(0i32..20, n);
            (pos, neg).prop_map(|(pos, neg)| {
                pos.into_iter()
                    .map(|s| (s as f64 / 4.0, Label::Anomaly))
                    .chain(neg.into_iter().map(|s| (s as f64 / 4.0, Label::Normal)))
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn matches_pairwise_count(scored in instance()) {
            prop_assert_eq!(auc(&scored).unwrap(), brute(&scored));
        }

        #[test]
        fn invariant_under_increasing_maps(scored in instance()) {
            let mapped: Vec<(f64, Label)> = scored.iter().map(|&(s, l)| ((s * 0.7).exp() - 3.0, l)).collect();
            prop_assert_eq!(auc(&scored).unwrap(), auc(&mapped).unwrap());
        }
    }
}
