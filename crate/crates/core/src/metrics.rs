//! Classification scores and seed aggregation.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {truth} true labels vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("no scores to aggregate")]
    Empty,
}

/// Support-weighted mean of per-class F1.
///
/// Precision or recall with an empty denominator counts as 0, so a class that
/// is never predicted scores F1 = 0. An empty input scores 0.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64, MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Ok(0.0);
    }
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for label in [t, p] {
            if label >= n_classes {
                return Err(MetricError::LabelOutOfRange { label, n_classes });
            }
        }
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let n = y_true.len() as f64;
    let score = (0..n_classes)
        .map(|k| {
            let precision = ratio(tp[k], predicted[k]);
            let recall = ratio(tp[k], support[k]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            support[k] as f64 / n * f1
        })
        .sum();
    Ok(score)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64, MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Ok(0.0);
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate_seeds(scores: &[f64]) -> Result<(f64, f64), MetricError> {
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_example() {
        let f1 = weighted_f1(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0], 2).unwrap();
        assert!((f1 - 0.6).abs() < 1e-15, "{f1}");
    }

    #[test]
    fn perfect_and_flipped() {
        let y = [0, 1, 0, 1, 2];
        assert_eq!(weighted_f1(&y, &y, 3).unwrap(), 1.0);
        assert_eq!(weighted_f1(&[0, 0, 1, 1], &[1, 1, 0, 0], 2).unwrap(), 0.0);
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        // class 1 never predicted: precision 0/0 -> 0
        let f1 = weighted_f1(&[0, 0, 1], &[0, 0, 0], 2).unwrap();
        let f1_class0 = 2.0 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0);
        assert!((f1 - 2.0 / 3.0 * f1_class0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            weighted_f1(&[0, 1], &[0], 2),
            Err(MetricError::LengthMismatch { truth: 2, pred: 1 })
        );
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_seeds(&[0.7]).unwrap(), (0.7, 0.0));
        let (m, s) = aggregate_seeds(&[0.8, 0.9]).unwrap();
        assert!((m - 0.85).abs() < 1e-12);
        assert!((s - 0.05).abs() < 1e-12);
        assert_eq!(aggregate_seeds(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn argmax_lowest_index_tie_break() {
        assert_eq!(argmax(&[3.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    proptest! {
        #[test]
        fn f1_in_unit_interval(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let f1 = weighted_f1(&t, &p, 4).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&f1));
        }

        #[test]
        fn aggregate_order_invariant(mut xs in prop::collection::vec(0.0f64..1.0, 1..10)) {
            let (m1, s1) = aggregate_seeds(&xs).unwrap();
            xs.reverse();
            let (m2, s2) = aggregate_seeds(&xs).unwrap();
            prop_assert!((m1 - m2).abs() < 1e-12 && (s1 - s2).abs() < 1e-12);
        }
    }
}
