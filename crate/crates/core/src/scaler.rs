use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::series::SeriesError;

/// Standard scaler with population standard deviation (divisor `n`).
///
/// A zero standard deviation marks the scaler degenerate: `apply` then only
/// subtracts the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler<T = f64> {
    pub mean: T,
    pub std: T,
}

impl<T: Scalar> Scaler<T> {
    /// Single-pass Welford accumulation.
    pub fn fit(values: &[T]) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::EmptyInput);
        }
        let mut mean = T::zero();
        let mut m2 = T::zero();
        for (i, &v) in values.iter().enumerate() {
            let n = T::from_usize_lossy(i + 1);
            let delta = v - mean;
            mean = mean + delta / n;
            m2 = m2 + delta * (v - mean);
        }
        let var = (m2 / T::from_usize_lossy(values.len())).max(T::zero());
        Ok(Self { mean, std: var.sqrt() })
    }

    pub fn is_degenerate(&self) -> bool {
        self.std == T::zero()
    }

    pub fn apply_one(&self, v: T) -> T {
        if self.is_degenerate() {
            v - self.mean
        } else {
            (v - self.mean) / self.std
        }
    }

    pub fn invert_one(&self, v: T) -> T {
        if self.is_degenerate() {
            v + self.mean
        } else {
            v * self.std + self.mean
        }
    }

    pub fn apply(&self, values: &[T]) -> Vec<T> {
        values.iter().map(|&v| self.apply_one(v)).collect()
    }

    pub fn invert(&self, values: &[T]) -> Vec<T> {
        values.iter().map(|&v| self.invert_one(v)).collect()
    }
}
