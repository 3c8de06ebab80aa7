use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy against integer labels, and its gradient
/// `(softmax − onehot) / B` with respect to the logits.
pub fn softmax_cross_entropy_labels<T: Scalar>(
    logits: ArrayView2<'_, T>,
    labels: &[usize],
) -> Result<(T, Array2<T>)> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidLabel(format!(
            "label {bad} with {classes} classes"
        )));
    }
    let inv_batch = T::one() / T::of(batch as f64);
    let mut grad = softmax(logits);
    let mut total = T::zero();
    for ((mut g, z), &y) in grad
        .axis_iter_mut(Axis(0))
        .zip(logits.axis_iter(Axis(0)))
        .zip(labels)
    {
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total += log_sum - z[y];
        g[y] -= T::one();
        g.mapv_inplace(|v| v * inv_batch);
    }
    Ok((total * inv_batch, grad))
}

/// Mean cross-entropy against one-hot targets.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: ArrayView2<'_, T>,
    onehot: ArrayView2<'_, T>,
) -> Result<(T, Array2<T>)> {
    if onehot.dim() != logits.dim() {
        return Err(Error::Shape(format!(
            "targets {:?} vs logits {:?}",
            onehot.dim(),
            logits.dim()
        )));
    }
    let mut labels = Vec::with_capacity(onehot.nrows());
    for (r, row) in onehot.axis_iter(Axis(0)).enumerate() {
        let ones: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == T::one())
            .map(|(i, _)| i)
            .collect();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones.len() != 1 || zeros + 1 != row.len() {
            return Err(Error::InvalidLabel(format!("row {r} is not one-hot")));
        }
        labels.push(ones[0]);
    }
    softmax_cross_entropy_labels(logits, &labels)
}

pub fn labels_to_onehot<T: Scalar>(labels: &[usize], classes: usize) -> Array2<T> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (r, &y) in labels.iter().enumerate() {
        out[[r, y]] = T::one();
    }
    out
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(scores: ArrayView2<'_, T>) -> Vec<usize> {
    scores
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label. Empty input scores 0.
pub fn accuracy<T: Scalar>(scores: ArrayView2<'_, T>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(scores)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::relative_error;
    use crate::rng::stream;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Array2::<f64>::zeros((3, 4));
        let (loss, _) = softmax_cross_entropy_labels(logits.view(), &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_prediction() {
        let logits: Array2<f64> = array![[10.0, -10.0]];
        let onehot = array![[1.0, 0.0]];
        let (loss, grad) = softmax_cross_entropy(logits.view(), onehot.view()).unwrap();
        assert!(loss < 1e-8);
        assert!(grad.iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits: Array2<f64> = array![[1000.0, 999.0, -1000.0]];
        let (loss, grad) = softmax_cross_entropy_labels(logits.view(), &[1]).unwrap();
        assert!(loss.is_finite() && grad.iter().all(|g| g.is_finite()));
        assert!((loss - (1.0 + (1.0 + (-1f64).exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_onehot_rows() {
        let logits = Array2::<f64>::zeros((2, 3));
        let two_hot = array![[1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        let empty = array![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let frac = array![[0.5, 0.5, 0.0], [0.0, 1.0, 0.0]];
        for t in [two_hot, empty, frac] {
            assert!(matches!(
                softmax_cross_entropy(logits.view(), t.view()),
                Err(Error::InvalidLabel(_))
            ));
        }
        assert!(matches!(
            softmax_cross_entropy_labels(logits.view(), &[0, 3]),
            Err(Error::InvalidLabel(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(11, 0, 0);
        let logits = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-3.0..3.0));
        let labels = [4usize, 0, 2, 2];
        let (_, grad) = softmax_cross_entropy_labels(logits.view(), &labels).unwrap();
        let eps = 1e-5;
        for r in 0..4 {
            for c in 0..5 {
                let mut up = logits.clone();
                up[[r, c]] += eps;
                let mut down = logits.clone();
                down[[r, c]] -= eps;
                let fu = softmax_cross_entropy_labels(up.view(), &labels).unwrap().0;
                let fd = softmax_cross_entropy_labels(down.view(), &labels)
                    .unwrap()
                    .0;
                let numeric = (fu - fd) / (2.0 * eps);
                assert!(relative_error(grad[[r, c]], numeric) < 1e-6);
            }
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let s = array![[1.0, 3.0, 3.0], [2.0, 2.0, 2.0]];
        assert_eq!(argmax_rows(s.view()), vec![1, 0]);
        assert_eq!(accuracy(s.view(), &[1, 1]), 0.5);
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let logits = Array2::from_shape_vec((3, 4), vals).unwrap();
            let p = softmax(logits.view());
            for row in p.axis_iter(Axis(0)) {
                prop_assert!(row.iter().all(|&v| v > 0.0));
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn loss_is_invariant_to_row_order(
            vals in proptest::collection::vec(-5.0f64..5.0, 15),
            labels in proptest::collection::vec(0usize..3, 5),
            rot in 0usize..5,
        ) {
            let logits = Array2::from_shape_vec((5, 3), vals).unwrap();
            let perm: Vec<usize> = (0..5).map(|i| (i + rot) % 5).collect();
            let shuffled = logits.select(Axis(0), &perm);
            let shuffled_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let (a, _) = softmax_cross_entropy_labels(logits.view(), &labels).unwrap();
            let (b, _) = softmax_cross_entropy_labels(shuffled.view(), &shuffled_labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
