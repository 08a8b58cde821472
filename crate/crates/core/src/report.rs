//! Benchmark-style metric tables: Exec, fast_p, pass@k and geometric-mean
//! speedup, per level tag when records carry one.
//!
//! Exec and fast_p use each task's first evaluated generation. pass@k uses
//! the first `k`; it is reported only when every task in the column has at
//! least `k` evaluated generations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::metrics::{self, Geomean, MetricConfig, MetricError};
use crate::records::{Status, TaskGroup};

/// Record field holding the optional level tag.
pub const LEVEL_FIELD: &str = "level";

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no evaluated tasks")]
    Empty,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct FastP {
    pub p: f64,
    pub value: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LevelMetrics {
    pub level: String,
    pub n_tasks: usize,
    pub exec: f64,
    pub fast_p: Vec<FastP>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_k_exec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_k_fast1: Option<f64>,
    /// Tasks with fewer than `k` evaluated generations.
    pub n_tasks_below_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geomean_speedup: Option<Geomean>,
}

fn level_of(group: &TaskGroup) -> Option<String> {
    let v = group.items.first()?.record.extra.get(LEVEL_FIELD)?;
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn column(level: String, groups: &[&TaskGroup], cfg: &MetricConfig) -> Result<LevelMetrics, ReportError> {
    let mut first_status = Vec::new();
    let mut first_speedup = Vec::new();
    let mut pass_exec = Vec::new();
    let mut pass_fast = Vec::new();
    for g in groups {
        let evaluated: Vec<(Status, f64)> = g
            .items
            .iter()
            .filter_map(|i| i.eval.as_ref().map(|e| (e.status, e.speedup)))
            .collect();
        let Some(&(status, speedup)) = evaluated.first() else { continue };
        first_status.push(status);
        first_speedup.push(speedup);
        let statuses: Vec<Status> = evaluated.iter().map(|e| e.0).collect();
        let speedups: Vec<f64> = evaluated.iter().map(|e| e.1).collect();
        if statuses.len() >= cfg.k {
            pass_exec.push(metrics::pass_at_k_exec(&statuses, cfg.k)?);
            pass_fast.push(metrics::pass_at_k_fast1(&speedups, cfg.k)?);
        }
    }
    if first_status.is_empty() {
        return Err(ReportError::Empty);
    }
    let n = first_status.len();
    let share = |v: &[bool]| v.iter().filter(|b| **b).count() as f64 / v.len() as f64;
    let full_k = pass_exec.len() == n;
    Ok(LevelMetrics {
        level,
        n_tasks: n,
        exec: metrics::exec_rate(&first_status)?,
        fast_p: cfg
            .p_thresholds
            .iter()
            .map(|&p| Ok(FastP { p, value: metrics::fast_p(&first_speedup, p)? }))
            .collect::<Result<_, MetricError>>()?,
        pass_at_k_exec: full_k.then(|| share(&pass_exec)),
        pass_at_k_fast1: full_k.then(|| share(&pass_fast)),
        n_tasks_below_k: n - pass_exec.len(),
        geomean_speedup: metrics::geomean_speedup(&first_speedup, false).ok(),
    })
}

/// One column per level tag (sorted) followed by `all`; just `all` when no
/// task is tagged.
pub fn metric_table(groups: &[TaskGroup], cfg: &MetricConfig) -> Result<Vec<LevelMetrics>, ReportError> {
    cfg.validate()?;
    let mut by_level: BTreeMap<String, Vec<&TaskGroup>> = BTreeMap::new();
    let mut tagged = false;
    for g in groups {
        let level = level_of(g);
        tagged |= level.is_some();
        by_level.entry(level.unwrap_or_else(|| "untagged".into())).or_default().push(g);
    }
    let mut out = Vec::new();
    if tagged {
        for (level, gs) in by_level {
            out.push(column(level, &gs, cfg)?);
        }
    }
    let all: Vec<&TaskGroup> = groups.iter().collect();
    out.push(column("all".into(), &all, cfg)?);
    Ok(out)
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

/// Plain-text table with a self-describing header.
pub fn render_table(columns: &[LevelMetrics], cfg: &MetricConfig) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let cell = |f: &dyn Fn(&LevelMetrics) -> String| columns.iter().map(f).collect::<Vec<_>>();
    rows.push(("metric".into(), cell(&|c| c.level.clone())));
    rows.push(("tasks".into(), cell(&|c| c.n_tasks.to_string())));
    rows.push(("Exec".into(), cell(&|c| pct(c.exec))));
    for (i, p) in cfg.p_thresholds.iter().enumerate() {
        rows.push((format!("fast_{p}"), cell(&|c| pct(c.fast_p[i].value))));
    }
    let k = cfg.k;
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), pct);
    rows.push((format!("pass@{k}_exec"), cell(&|c| opt(c.pass_at_k_exec))));
    rows.push((format!("pass@{k}_fast_1"), cell(&|c| opt(c.pass_at_k_fast1))));
    rows.push((
        "G_speedup".into(),
        cell(&|c| c.geomean_speedup.map_or_else(|| "n/a".into(), |g| format!("{:.3}", g.value))),
    ));
    rows.push((
        "G_zeros_excluded".into(),
        cell(&|c| c.geomean_speedup.map_or(c.n_tasks, |g| g.n_zeros_excluded).to_string()),
    ));

    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0) + 2;
    let col_w = rows.iter().flat_map(|r| r.1.iter().map(String::len)).max().unwrap_or(0).max(6) + 2;
    let mut out = String::new();
    let ps: Vec<String> = cfg.p_thresholds.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(
        out,
        "# p_thresholds=[{}] k={} exec/fast_p=first_generation geomean=positive_only",
        ps.join(","),
        k
    );
    for (label, cells) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for c in cells {
            let _ = write!(out, "{c:>col_w$}");
        }
        out.push('\n');
    }
    out
}
