//! Small numeric helpers shared by the estimators.

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated mean; `None` for an empty sample.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let total = values.iter().copied().collect::<CompensatedSum>().total();
    Some(total / values.len() as f64)
}

/// 1-based nearest rank `ceil(q * n)`, clamped to `[1, n]`.
///
/// Products that land within rounding noise of an integer are treated as that
/// integer, so `q = 0.7, n = 10` gives rank 7 rather than 8.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let r = q * n as f64;
    let rounded = r.round();
    let rank = if (r - rounded).abs() <= 1e-9 * (n as f64).max(1.0) { rounded } else { r.ceil() };
    (rank.max(1.0) as usize).min(n)
}

/// Nearest-rank quantile of an already sorted (ascending) slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    Some(sorted[nearest_rank(q, sorted.len()) - 1])
}

/// Nearest-rank quantile: sorts ascending and returns the element at rank
/// `ceil(q * n)` (1-based). No interpolation.
pub fn quantile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample("no values".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile level {q} outside (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(q, sorted.len()) - 1])
}
