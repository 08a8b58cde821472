//! Reasoning-length statistics: accuracy per length bin, box statistics of
//! lengths split by correctness, and the length/speedup correlation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::TaskGroup;
use crate::special::student_t_two_sided;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("empty input")]
    Empty,
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("values and split have different lengths ({values} vs {split})")]
    SplitMismatch { values: usize, split: usize },
    #[error("{0} group is empty")]
    EmptyGroup(&'static str),
    #[error("x and y have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 pairs, have {0}")]
    TooFew(usize),
    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Accuracy over the half-open token range `[lo, hi)`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BinStat {
    pub lo: u64,
    pub hi: u64,
    pub n: u64,
    pub n_correct: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BoxStat {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub n_outliers: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CorrStat {
    pub r: f64,
    pub n: usize,
    /// Infinite (serialized as null) when |r| = 1.
    pub t_stat: f64,
    pub p_value: f64,
}

/// Bins `(reasoning_tokens, correct)` pairs into `[k·w, (k+1)·w)` buckets
/// from 0 through the bucket holding the longest trace. Empty buckets are
/// kept with no accuracy.
pub fn accuracy_by_length_bins(
    pairs: &[(u64, bool)],
    bin_width: u64,
) -> Result<Vec<BinStat>, AnalysisError> {
    if bin_width == 0 {
        return Err(AnalysisError::ZeroBinWidth);
    }
    let max = pairs.iter().map(|p| p.0).max().ok_or(AnalysisError::Empty)?;
    let n_bins = (max / bin_width + 1) as usize;
    let mut counts = vec![(0u64, 0u64); n_bins];
    for &(len, ok) in pairs {
        let c = &mut counts[(len / bin_width) as usize];
        c.0 += 1;
        c.1 += ok as u64;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, (n, n_correct))| BinStat {
            lo: i as u64 * bin_width,
            hi: (i as u64 + 1) * bin_width,
            n,
            n_correct,
            accuracy: (n > 0).then(|| n_correct as f64 / n as f64),
        })
        .collect())
}

/// Quantile by linear interpolation between order statistics (type 7).
/// `sorted` must be ascending and non-empty.
fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary with Tukey whiskers (1.5·IQR).
pub fn box_stat(values: &[f64]) -> Result<BoxStat, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_type7(&v, 0.25);
    let median = quantile_type7(&v, 0.5);
    let q3 = quantile_type7(&v, 0.75);
    let iqr = q3 - q1;
    let fence_lo = q1 - 1.5 * iqr;
    let fence_hi = q3 + 1.5 * iqr;
    let inside = v.iter().copied().filter(|x| (fence_lo..=fence_hi).contains(x));
    let (whisker_lo, whisker_hi) = inside.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    // whiskers are clamped to the box: with interpolated quartiles and a
    // zero IQR no data point need lie inside the fences
    let n_outliers = v.iter().filter(|x| !(fence_lo..=fence_hi).contains(*x)).count();
    Ok(BoxStat {
        n: v.len(),
        min: v[0],
        q1,
        median,
        q3,
        max: v[v.len() - 1],
        whisker_lo: whisker_lo.min(q1),
        whisker_hi: whisker_hi.max(q3),
        n_outliers,
    })
}

/// Box statistics for the values flagged `true` and for those flagged
/// `false`, in that order.
pub fn box_stats(values: &[f64], split: &[bool]) -> Result<(BoxStat, BoxStat), AnalysisError> {
    if values.len() != split.len() {
        return Err(AnalysisError::SplitMismatch {
            values: values.len(),
            split: split.len(),
        });
    }
    let (yes, no): (Vec<_>, Vec<_>) = values.iter().zip(split).partition(|(_, &s)| s);
    let yes: Vec<f64> = yes.into_iter().map(|(v, _)| *v).collect();
    let no: Vec<f64> = no.into_iter().map(|(v, _)| *v).collect();
    if yes.is_empty() {
        return Err(AnalysisError::EmptyGroup("true"));
    }
    if no.is_empty() {
        return Err(AnalysisError::EmptyGroup("false"));
    }
    Ok((box_stat(&yes)?, box_stat(&no)?))
}

/// Pearson product-moment correlation with a two-sided Student-t p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrStat, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFew(n));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    // streaming co-moments
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let k = (i + 1) as f64;
        let dx = xi - mx;
        let dy = yi - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (xi - mx);
        syy += dy * (yi - my);
        sxy += dx * (yi - my);
    }
    if sxx <= 0.0 {
        return Err(AnalysisError::ZeroVariance("x"));
    }
    if syy <= 0.0 {
        return Err(AnalysisError::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let (t_stat, p_value) = if r.abs() == 1.0 {
        (r.signum() * f64::INFINITY, 0.0)
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        (t, student_t_two_sided(t, df))
    };
    Ok(CorrStat {
        r,
        n,
        t_stat,
        p_value,
    })
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub bin_width: u64,
    /// Use incorrect generations (speedup 0) in the primary correlation.
    pub include_incorrect: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bin_width: 1000,
            include_incorrect: false,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Correlation {
    /// `correct_only` or `all_evaluated`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stat: Option<CorrStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BoxEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stat: Option<BoxStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

impl From<Result<BoxStat, AnalysisError>> for BoxEntry {
    fn from(r: Result<BoxStat, AnalysisError>) -> Self {
        match r {
            Ok(s) => BoxEntry {
                stat: Some(s),
                unavailable: None,
            },
            Err(e) => BoxEntry {
                stat: None,
                unavailable: Some(e.to_string()),
            },
        }
    }
}

/// Everything the analyze command writes, as one object.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub config: AnalysisConfig,
    pub quantile_method: String,
    pub whisker_iqr_factor: f64,
    pub n_evaluated: usize,
    pub n_correct: usize,
    pub bins: Vec<BinStat>,
    pub lengths_correct: BoxEntry,
    pub lengths_incorrect: BoxEntry,
    /// Correlation in the mode selected by `config.include_incorrect`.
    pub correlation: Correlation,
    /// The other mode, reported for sensitivity.
    pub correlation_alternate: Correlation,
}

fn correlation_for(items: &[(u64, bool, f64)], include_incorrect: bool) -> Correlation {
    let (x, y): (Vec<f64>, Vec<f64>) = items
        .iter()
        .filter(|(_, ok, _)| include_incorrect || *ok)
        .map(|&(len, _, s)| (len as f64, s))
        .unzip();
    let mode = if include_incorrect {
        "all_evaluated"
    } else {
        "correct_only"
    };
    match pearson(&x, &y) {
        Ok(stat) => Correlation {
            mode: mode.into(),
            stat: Some(stat),
            unavailable: None,
        },
        Err(e) => Correlation {
            mode: mode.into(),
            stat: None,
            unavailable: Some(e.to_string()),
        },
    }
}

/// Builds the full report over every evaluated generation in `groups`.
pub fn analyze(groups: &[TaskGroup], cfg: &AnalysisConfig) -> Result<AnalysisReport, AnalysisError> {
    if cfg.bin_width == 0 {
        return Err(AnalysisError::ZeroBinWidth);
    }
    let items: Vec<(u64, bool, f64)> = groups
        .iter()
        .flat_map(|g| &g.items)
        .filter(|i| i.eval.is_some())
        .map(|i| (i.reasoning_tokens(), i.is_correct(), i.speedup()))
        .collect();
    if items.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let pairs: Vec<(u64, bool)> = items.iter().map(|&(l, ok, _)| (l, ok)).collect();
    let bins = accuracy_by_length_bins(&pairs, cfg.bin_width)?;
    let lengths = |want: bool| -> Vec<f64> {
        items
            .iter()
            .filter(|(_, ok, _)| *ok == want)
            .map(|&(l, _, _)| l as f64)
            .collect()
    };
    let n_correct = pairs.iter().filter(|p| p.1).count();
    Ok(AnalysisReport {
        config: cfg.clone(),
        quantile_method: "type7".into(),
        whisker_iqr_factor: 1.5,
        n_evaluated: items.len(),
        n_correct,
        bins,
        lengths_correct: box_stat(&lengths(true)).into(),
        lengths_incorrect: box_stat(&lengths(false)).into(),
        correlation: correlation_for(&items, cfg.include_incorrect),
        correlation_alternate: correlation_for(&items, !cfg.include_incorrect),
    })
}
