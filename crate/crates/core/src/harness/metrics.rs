use super::HarnessError;

/// `sqrt(Σ(y−z)² / Σy²)` over paired values.
pub fn nrmse(y: &[f64], z: &[f64]) -> Result<f64, HarnessError> {
    if y.len() != z.len() {
        return Err(HarnessError::Metric(format!("nrmse: {} targets vs {} releases", y.len(), z.len())));
    }
    let energy: f64 = y.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(HarnessError::Metric("nrmse: reference signal is identically zero".into()));
    }
    let err: f64 = y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((err / energy).sqrt())
}

/// Mean per-class recall in percent. Classes absent from `truth` do not
/// enter the mean.
pub fn balanced_accuracy(pred: &[usize], truth: &[usize], alphabet_size: usize) -> Result<f64, HarnessError> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(HarnessError::Metric(format!(
            "balanced accuracy: {} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut hits = vec![0usize; alphabet_size];
    let mut totals = vec![0usize; alphabet_size];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= alphabet_size || p >= alphabet_size {
            return Err(HarnessError::Metric(format!("label outside alphabet of size {alphabet_size}")));
        }
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let recalls: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &n)| n > 0)
        .map(|(&h, &n)| h as f64 / n as f64)
        .collect();
    Ok(100.0 * recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Balanced accuracy of one majority-vote decision per sequence against the
/// sequence's first label. Ties go to the smallest label.
pub fn majority_vote_accuracy(
    pred: &[Vec<usize>],
    truth: &[Vec<usize>],
    alphabet_size: usize,
) -> Result<f64, HarnessError> {
    let votes: Vec<usize> = pred
        .iter()
        .map(|seq| {
            let mut counts = vec![0usize; alphabet_size];
            seq.iter().for_each(|&p| counts[p.min(alphabet_size - 1)] += 1);
            let best = *counts.iter().max().unwrap_or(&0);
            counts.iter().position(|&c| c == best).unwrap_or(0)
        })
        .collect();
    let heads: Vec<usize> = truth.iter().map(|s| s.first().copied().unwrap_or(0)).collect();
    balanced_accuracy(&votes, &heads, alphabet_size)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nrmse_anchors() {
        let y = [0.3, 1.2, 0.0, 2.5];
        assert_eq!(nrmse(&y, &y).unwrap(), 0.0);
        assert_eq!(nrmse(&y, &[0.0; 4]).unwrap(), 1.0);
        let twice: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert_eq!(nrmse(&y, &twice).unwrap(), 1.0);
        assert!(nrmse(&[0.0; 3], &[1.0; 3]).is_err());
        assert!(nrmse(&y, &[1.0]).is_err());
    }

    #[test]
    fn nrmse_hand_value() {
        // Σ(y−z)² = 0.25 + 1, Σy² = 1 + 4
        assert_eq!(nrmse(&[1.0, 2.0], &[1.5, 1.0]).unwrap(), (1.25f64 / 5.0).sqrt());
    }

    #[test]
    fn balanced_accuracy_anchors() {
        let truth = [0, 1, 0, 1];
        assert_eq!(balanced_accuracy(&[0; 4], &truth, 2).unwrap(), 50.0);
        assert_eq!(balanced_accuracy(&truth, &truth, 2).unwrap(), 100.0);
        let mut skewed = vec![0; 90];
        skewed.extend([1; 10]);
        assert_eq!(balanced_accuracy(&[0; 100], &skewed, 2).unwrap(), 50.0);
        assert!(balanced_accuracy(&[], &[], 2).is_err());
        assert!(balanced_accuracy(&[3], &[0], 2).is_err());
    }

    #[test]
    fn absent_classes_are_excluded() {
        // class 2 never occurs: mean of recalls 1 and 0.5
        assert_eq!(balanced_accuracy(&[0, 1, 0], &[0, 1, 1], 3).unwrap(), 75.0);
    }

    #[test]
    fn majority_vote() {
        let pred = vec![vec![1, 1, 0], vec![2, 0, 2], vec![0, 0, 1]];
        let truth = vec![vec![1; 3], vec![2; 3], vec![1; 3]];
        // votes 1, 2, 0 against 1, 2, 1: recall(1) = 1/2, recall(2) = 1
        assert!((majority_vote_accuracy(&pred, &truth, 3).unwrap() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0; 3]), 0.0);
        // scipy.stats.spearmanr([0, .5, 1, 2, 5], [5, 1, 2, 3, 4]).statistic
        assert!((spearman(&[0.0, 0.5, 1.0, 2.0, 5.0], &[5.0, 1.0, 2.0, 3.0, 4.0]) - 0.0).abs() < 1e-12);
        // scipy.stats.spearmanr([1, 2, 3, 4], [1, 3, 3, 2]).statistic = 0.316227766016838
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 3.0, 2.0]) - 0.316227766016838).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn balanced_accuracy_in_range(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..50)
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let acc = balanced_accuracy(&p, &t, 4).unwrap();
            prop_assert!((0.0..=100.0).contains(&acc));
        }

        #[test]
        fn nrmse_non_negative(
            y in proptest::collection::vec(0.1f64..5.0, 1..30),
            shift in -2.0f64..2.0,
        ) {
            let z: Vec<f64> = y.iter().map(|v| v + shift).collect();
            prop_assert!(nrmse(&y, &z).unwrap() >= 0.0);
        }
    }
}
