//! Task difficulty tiers from per-task average reasoning length.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricError};
use crate::records::TaskGroup;

#[derive(Debug, Error, PartialEq)]
pub enum DifficultyError {
    #[error("task group {0} is empty")]
    EmptyGroup(String),
    #[error("easy_max ({easy_max}) must be below hard_min ({hard_min})")]
    BadBands { easy_max: f64, hard_min: f64 },
    #[error("min_generations must be at least 1")]
    ZeroMinGenerations,
    #[error("no evals for task {0}")]
    MissingEvals(String),
    #[error("task {task}: {source}")]
    Metric {
        task: String,
        #[source]
        source: MetricError,
    },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DifficultyConfig {
    pub easy_max: f64,
    pub hard_min: f64,
    pub min_generations: usize,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        DifficultyConfig {
            easy_max: 4000.0,
            hard_min: 8500.0,
            min_generations: 10,
        }
    }
}

impl DifficultyConfig {
    pub fn validate(&self) -> Result<(), DifficultyError> {
        if !(self.easy_max.is_finite() && self.hard_min.is_finite() && self.easy_max < self.hard_min) {
            return Err(DifficultyError::BadBands {
                easy_max: self.easy_max,
                hard_min: self.hard_min,
            });
        }
        if self.min_generations == 0 {
            return Err(DifficultyError::ZeroMinGenerations);
        }
        Ok(())
    }

    /// Easy below `easy_max`, hard above `hard_min`, medium in between with
    /// both edges included.
    pub fn tier_of(&self, arl: f64) -> Tier {
        if arl < self.easy_max {
            Tier::Easy
        } else if arl > self.hard_min {
            Tier::Hard
        } else {
            Tier::Medium
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Easy => "easy",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
        })
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DifficultyLabel {
    pub task_id: String,
    pub task_arl: f64,
    pub tier: Tier,
    pub m_used: usize,
    /// Fewer than `min_generations` generations backed the ARL.
    pub low_confidence: bool,
}

/// Mean reasoning length over every generation of the task, correct or not.
pub fn task_arl(group: &TaskGroup) -> Result<f64, DifficultyError> {
    if group.is_empty() {
        return Err(DifficultyError::EmptyGroup(group.task_id.clone()));
    }
    let total: u128 = group.items.iter().map(|i| i.reasoning_tokens() as u128).sum();
    Ok(total as f64 / group.len() as f64)
}

pub fn classify(groups: &[TaskGroup], cfg: &DifficultyConfig) -> Result<Vec<DifficultyLabel>, DifficultyError> {
    cfg.validate()?;
    groups
        .iter()
        .map(|g| {
            let arl = task_arl(g)?;
            Ok(DifficultyLabel {
                task_id: g.task_id.clone(),
                task_arl: arl,
                tier: cfg.tier_of(arl),
                m_used: g.len(),
                low_confidence: g.len() < cfg.min_generations,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TierStat {
    pub tier: Tier,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geomean_speedup: Option<f64>,
    /// Tasks left out of the geometric mean because their speedup is 0.
    pub n_zero_excluded: usize,
}

/// Per-tier exec rate and geometric-mean speedup.
///
/// A task counts as executed when any of its first `k` generations is
/// correct; its speedup is the best among those `k`. The geometric mean runs
/// over tasks with a positive speedup.
pub fn tier_report(
    labels: &[DifficultyLabel],
    groups: &[TaskGroup],
    k: usize,
) -> Result<Vec<TierStat>, DifficultyError> {
    let by_task: BTreeMap<&str, &TaskGroup> = groups.iter().map(|g| (g.task_id.as_str(), g)).collect();
    let mut per_tier: BTreeMap<Tier, (Vec<bool>, Vec<f64>)> = BTreeMap::new();
    for label in labels {
        let group = by_task
            .get(label.task_id.as_str())
            .filter(|g| g.items.iter().all(|i| i.eval.is_some()) && !g.is_empty())
            .ok_or_else(|| DifficultyError::MissingEvals(label.task_id.clone()))?;
        let wrap = |source| DifficultyError::Metric {
            task: label.task_id.clone(),
            source,
        };
        let passed = metrics::pass_at_k_exec(&group.statuses(), k).map_err(wrap)?;
        let speedups = group.speedups();
        let best = speedups[..k].iter().copied().fold(0.0f64, f64::max);
        let entry = per_tier.entry(label.tier).or_default();
        entry.0.push(passed);
        entry.1.push(best);
    }
    Ok(Tier::ALL
        .iter()
        .map(|&tier| match per_tier.get(&tier) {
            None => TierStat {
                tier,
                n: 0,
                exec_rate: None,
                geomean_speedup: None,
                n_zero_excluded: 0,
            },
            Some((passed, speedups)) => {
                let geo = metrics::geomean_speedup(speedups, false).ok();
                TierStat {
                    tier,
                    n: passed.len(),
                    exec_rate: Some(passed.iter().filter(|p| **p).count() as f64 / passed.len() as f64),
                    geomean_speedup: geo.map(|g| g.value),
                    n_zero_excluded: geo.map_or(speedups.len(), |g| g.n_zeros_excluded),
                }
            }
        })
        .collect())
}

/// Trailing summary object of a difficulty report.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DifficultySummary {
    #[serde(rename = "type")]
    pub kind: String,
    pub config: DifficultyConfig,
    pub n_tasks: usize,
    pub counts: BTreeMap<Tier, usize>,
    pub n_low_confidence: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiers: Option<Vec<TierStat>>,
}

impl DifficultySummary {
    pub fn new(cfg: &DifficultyConfig, labels: &[DifficultyLabel]) -> Self {
        let mut counts: BTreeMap<Tier, usize> = Tier::ALL.iter().map(|&t| (t, 0)).collect();
        for l in labels {
            *counts.entry(l.tier).or_default() += 1;
        }
        DifficultySummary {
            kind: "summary".into(),
            config: cfg.clone(),
            n_tasks: labels.len(),
            counts,
            n_low_confidence: labels.iter().filter(|l| l.low_confidence).count(),
            k: None,
            tiers: None,
        }
    }
}

/// Labels one per line, then the summary line.
pub fn difficulty_to_jsonl(labels: &[DifficultyLabel], summary: &DifficultySummary) -> String {
    let mut out = crate::records::to_jsonl(labels);
    out.push_str(&serde_json::to_string(summary).expect("summary serializes"));
    out.push('\n');
    out
}
