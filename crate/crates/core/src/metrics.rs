//! Scalar metrics over evaluation results.
//!
//! All functions are pure and accumulate in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::Status;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("timings must be finite and strictly positive (t_ref_ms = {t_ref_ms}, t_kernel_ms = {t_kernel_ms})")]
    NonPositiveTime { t_ref_ms: f64, t_kernel_ms: f64 },
    #[error("threshold p must be finite and > 0, got {0}")]
    BadThreshold(f64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least {k} generations, have {have}")]
    TooFewGenerations { have: usize, k: usize },
    #[error("row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("speedup {0} is not a finite non-negative number")]
    BadSpeedup(f64),
    #[error("no strictly positive speedups to average")]
    NoPositive,
    #[error("p_thresholds must be non-empty, positive and ascending")]
    BadThresholds,
}

/// Thresholds for fast_p and the k of pass@k.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub p_thresholds: Vec<f64>,
    pub k: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            p_thresholds: vec![1.0],
            k: 10,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.k == 0 {
            return Err(MetricError::ZeroK);
        }
        let positive = self.p_thresholds.iter().all(|p| p.is_finite() && *p > 0.0);
        let sorted = self.p_thresholds.windows(2).all(|w| w[0] <= w[1]);
        if self.p_thresholds.is_empty() || !positive || !sorted {
            return Err(MetricError::BadThresholds);
        }
        Ok(())
    }
}

/// Speedup over the reference, gated by correctness: `t_ref / t_kernel` when
/// correct, exactly `0.0` otherwise.
pub fn speedup(t_ref_ms: f64, t_kernel_ms: f64, correct: bool) -> Result<f64, MetricError> {
    let valid = |t: f64| t.is_finite() && t > 0.0;
    if !valid(t_ref_ms) || !valid(t_kernel_ms) {
        return Err(MetricError::NonPositiveTime {
            t_ref_ms,
            t_kernel_ms,
        });
    }
    Ok(if correct { t_ref_ms / t_kernel_ms } else { 0.0 })
}

/// Fraction of tasks whose speedup is strictly greater than `p`.
pub fn fast_p(speedups: &[f64], p: f64) -> Result<f64, MetricError> {
    if speedups.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(MetricError::BadThreshold(p));
    }
    let hits = speedups.iter().filter(|&&s| s > p).count();
    Ok(hits as f64 / speedups.len() as f64)
}

/// Fraction of statuses that are `correct`.
pub fn exec_rate(statuses: &[Status]) -> Result<f64, MetricError> {
    if statuses.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = statuses.iter().filter(|s| s.is_correct()).count();
    Ok(hits as f64 / statuses.len() as f64)
}

fn first_k<T>(items: &[T], k: usize) -> Result<&[T], MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if items.len() < k {
        return Err(MetricError::TooFewGenerations {
            have: items.len(),
            k,
        });
    }
    Ok(&items[..k])
}

/// Whether any of the first `k` generations (in `gen_index` order) is correct.
pub fn pass_at_k_exec(group_statuses: &[Status], k: usize) -> Result<bool, MetricError> {
    Ok(first_k(group_statuses, k)?.iter().any(|s| s.is_correct()))
}

/// Whether any of the first `k` generations has speedup strictly above 1.
pub fn pass_at_k_fast1(group_speedups: &[f64], k: usize) -> Result<bool, MetricError> {
    Ok(first_k(group_speedups, k)?.iter().any(|&s| s > 1.0))
}

/// Average reasoning length: the grand mean of an N×M length matrix.
pub fn arl<R: AsRef<[u64]>>(lengths: &[R]) -> Result<f64, MetricError> {
    let expected = lengths.first().ok_or(MetricError::Empty)?.as_ref().len();
    if expected == 0 {
        return Err(MetricError::Empty);
    }
    // Sum in u128 so the total is exact before the single division.
    let mut total: u128 = 0;
    for (row, r) in lengths.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != expected {
            return Err(MetricError::Ragged {
                row,
                len: r.len(),
                expected,
            });
        }
        total += r.iter().map(|&v| v as u128).sum::<u128>();
    }
    Ok(total as f64 / (lengths.len() * expected) as f64)
}

/// Geometric mean together with how many zero entries were dropped.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Geomean {
    pub value: f64,
    pub n_used: usize,
    pub n_zeros_excluded: usize,
}

/// Geometric mean of speedups, computed as the exponential of the mean log.
///
/// With `include_zeros = false` zero entries are skipped and counted in
/// [`Geomean::n_zeros_excluded`]; with `include_zeros = true` any zero makes
/// the result 0.
pub fn geomean_speedup(speedups: &[f64], include_zeros: bool) -> Result<Geomean, MetricError> {
    if speedups.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&bad) = speedups.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(MetricError::BadSpeedup(bad));
    }
    let zeros = speedups.iter().filter(|&&s| s == 0.0).count();
    if include_zeros && zeros > 0 {
        return Ok(Geomean {
            value: 0.0,
            n_used: speedups.len(),
            n_zeros_excluded: 0,
        });
    }
    let positive = speedups.len() - zeros;
    if positive == 0 {
        return Err(MetricError::NoPositive);
    }
    let log_sum: f64 = speedups.iter().filter(|&&s| s > 0.0).map(|s| s.ln()).sum();
    Ok(Geomean {
        value: (log_sum / positive as f64).exp(),
        n_used: positive,
        n_zeros_excluded: if include_zeros { 0 } else { zeros },
    })
}
