use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: {pred} predictions vs {truth} truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty vectors")]
    Empty,
}

/// Mean absolute error, `(1/H) * sum |pred_i - truth_i|`.
pub fn mae<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    let total: T = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(total / T::from_usize_lossy(pred.len()))
}

/// Median of a non-empty slice; mean of the two middle values for even lengths.
/// NaN values sort last.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}
