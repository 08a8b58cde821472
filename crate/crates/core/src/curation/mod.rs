//! Training-sample selection.
//!
//! The `concur` policy unions three parts:
//!
//! * **A** – per task, the generation with the shortest reasoning, kept only
//!   if it is correct and at least as fast as every other generation of the
//!   task.
//! * **B** – every correct generation whose speedup exceeds a threshold.
//! * **C** – the best correct generation of single-operator tasks not already
//!   represented, to balance task types.
//!
//! A key chosen by an earlier part is never repeated by a later one. The four
//! ablation policies each apply a single per-task rule and then keep the
//! `target_size` globally best tasks.

mod prompt;
mod sft;

use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{
    self, content_lines, CuratedSample, GroupItem, Part, Policy, RecordError, RecordKey,
    TaskGroup, TaskType, FORMAT_VERSION,
};

pub use prompt::{
    PromptTemplate, TemplateError, DEFAULT_TEMPLATE, FEW_SHOT_KERNEL, FEW_SHOT_TORCH,
};
pub use sft::{export_sft, SftError, SftExample, SftOptions};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("speedup threshold must be finite and > 0, got {0}")]
    BadThreshold(f64),
    #[error("target_size must be at least 1")]
    ZeroTarget,
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("curated file has no header line")]
    MissingHeader,
    #[error("line {line}: {message}")]
    BadHeader { line: usize, message: String },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CurationConfig {
    pub policy: Policy,
    pub speedup_threshold: f64,
    /// Cap on part C; 0 takes every eligible task.
    pub single_op_target: usize,
    /// Number of tasks kept by the ablation policies.
    pub target_size: usize,
    pub seed: u64,
    /// Classify untagged tasks with [`classify_task_type`] before part C.
    pub single_op_heuristic: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            policy: Policy::Concur,
            speedup_threshold: 5.0,
            single_op_target: 0,
            target_size: 4892,
            seed: 0,
            single_op_heuristic: false,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if !(self.speedup_threshold.is_finite() && self.speedup_threshold > 0.0) {
            return Err(CurationError::BadThreshold(self.speedup_threshold));
        }
        if self.target_size == 0 {
            return Err(CurationError::ZeroTarget);
        }
        Ok(())
    }
}

/// Per-part sample counts.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tallies {
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curation {
    pub samples: Vec<CuratedSample>,
    pub tallies: Tallies,
    /// Tasks skipped by part C because their type is unknown.
    pub skipped_unknown_tasks: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartC {
    pub samples: Vec<CuratedSample>,
    pub skipped_unknown_tasks: usize,
}

fn sample(group: &TaskGroup, item: &GroupItem, part: Option<Part>, policy: Policy) -> CuratedSample {
    CuratedSample {
        version: FORMAT_VERSION,
        task_id: group.task_id.clone(),
        gen_index: item.gen_index(),
        part,
        policy,
        speedup: item.speedup(),
        reasoning_tokens: item.reasoning_tokens(),
    }
}

fn correct_items(group: &TaskGroup) -> impl Iterator<Item = &GroupItem> {
    group.items.iter().filter(|i| i.is_correct() && i.speedup() > 0.0)
}

/// Fastest correct generation; ties go to shorter reasoning, then lower
/// `gen_index`.
fn best_by_speedup(group: &TaskGroup) -> Option<&GroupItem> {
    correct_items(group).min_by(|a, b| {
        b.speedup()
            .total_cmp(&a.speedup())
            .then(a.reasoning_tokens().cmp(&b.reasoning_tokens()))
            .then(a.gen_index().cmp(&b.gen_index()))
    })
}

/// Part A for one task.
pub fn select_part_a(group: &TaskGroup) -> Option<CuratedSample> {
    let shortest = group
        .items
        .iter()
        .min_by_key(|i| (i.reasoning_tokens(), i.gen_index()))?;
    let s = shortest.speedup();
    let fastest = group.items.iter().all(|i| i.speedup() <= s);
    (shortest.is_correct() && s > 0.0 && fastest)
        .then(|| sample(group, shortest, Some(Part::ShortAndFast), Policy::Concur))
}

/// Part B: correct generations with speedup strictly above `threshold`,
/// minus keys in `exclude`. Output is sorted by key.
pub fn select_part_b(
    groups: &[TaskGroup],
    threshold: f64,
    exclude: &BTreeSet<RecordKey>,
) -> Vec<CuratedSample> {
    let mut out: Vec<CuratedSample> = groups
        .iter()
        .flat_map(|g| {
            correct_items(g)
                .filter(|i| i.speedup() > threshold)
                .map(move |i| sample(g, i, Some(Part::HighSpeedup), Policy::Concur))
        })
        .filter(|s| !exclude.contains(&s.key()))
        .collect();
    out.sort_by(|a, b| (&a.task_id, a.gen_index).cmp(&(&b.task_id, b.gen_index)));
    out
}

/// Part C: best generation of each single-op task whose id is not in
/// `covered_tasks`, fastest first, truncated to `target` (0 keeps all).
pub fn select_part_c(groups: &[TaskGroup], covered_tasks: &HashSet<String>, target: usize) -> PartC {
    let mut skipped_unknown_tasks = 0;
    let mut picks: Vec<CuratedSample> = Vec::new();
    for g in groups {
        if covered_tasks.contains(&g.task_id) {
            continue;
        }
        match g.task_type {
            TaskType::SingleOp => {}
            TaskType::Unknown => {
                skipped_unknown_tasks += 1;
                continue;
            }
            TaskType::MultiOp => continue,
        }
        if let Some(best) = best_by_speedup(g) {
            picks.push(sample(g, best, Some(Part::SingleOpBalance), Policy::Concur));
        }
    }
    picks.sort_by(|a, b| b.speedup.total_cmp(&a.speedup).then_with(|| a.task_id.cmp(&b.task_id)));
    if target > 0 {
        picks.truncate(target);
    }
    PartC {
        samples: picks,
        skipped_unknown_tasks,
    }
}

fn operator_call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(?:torch\.nn\.functional|torch\.nn|torch|nn|F)\.([A-Za-z_][A-Za-z0-9_]*)\s*\(")
            .expect("static regex")
    })
}

/// Helpers that construct modules or inputs rather than compute.
const NON_OPERATORS: &[&str] = &[
    "Module", "Parameter", "ModuleList", "Sequential", "randn", "rand", "randint", "zeros",
    "ones", "empty", "tensor", "arange", "no_grad", "device", "manual_seed", "cuda", "Tensor",
    "load_inline", "zeros_like", "ones_like", "empty_like", "full",
];

/// Guesses the task type from the reference program: one distinct operator
/// call means `single_op`, more means `multi_op`, none means `unknown`.
pub fn classify_task_type(task_source: &str) -> TaskType {
    let ops: BTreeSet<&str> = operator_call_re()
        .captures_iter(task_source)
        .filter_map(|c| c.get(1).map(|m| m.as_str()))
        .filter(|name| !NON_OPERATORS.contains(name))
        .collect();
    match ops.len() {
        0 => TaskType::Unknown,
        1 => TaskType::SingleOp,
        _ => TaskType::MultiOp,
    }
}

fn with_heuristic_types(groups: &[TaskGroup]) -> Vec<TaskGroup> {
    groups
        .iter()
        .map(|g| {
            let mut g = g.clone();
            if g.task_type == TaskType::Unknown {
                if let Some(first) = g.items.first() {
                    g.task_type = classify_task_type(&first.record.task_source);
                }
            }
            g
        })
        .collect()
}

fn sort_samples(samples: &mut [CuratedSample]) {
    samples.sort_by(|a, b| {
        (a.part, &a.task_id, a.gen_index).cmp(&(b.part, &b.task_id, b.gen_index))
    });
}

/// Per-task pick for an ablation policy, then the global ranking key
/// (larger ranks first).
fn ablation_candidates(groups: &[TaskGroup], policy: Policy) -> Vec<(f64, CuratedSample)> {
    groups
        .iter()
        .filter_map(|g| {
            let pick = match policy {
                Policy::MaxLen => correct_items(g)
                    .min_by_key(|i| (std::cmp::Reverse(i.reasoning_tokens()), i.gen_index())),
                Policy::MinLen => correct_items(g).min_by_key(|i| (i.reasoning_tokens(), i.gen_index())),
                Policy::SpeedupFirst => best_by_speedup(g),
                Policy::Concur | Policy::Random => unreachable!("not a ranked ablation policy"),
            }?;
            let rank = match policy {
                Policy::MaxLen => pick.reasoning_tokens() as f64,
                Policy::MinLen => -(pick.reasoning_tokens() as f64),
                _ => pick.speedup(),
            };
            Some((rank, sample(g, pick, None, policy)))
        })
        .collect()
}

fn clamp_target(target: usize, available: usize, warnings: &mut Vec<String>) -> usize {
    if target > available {
        warnings.push(format!(
            "target_size {target} exceeds the {available} tasks with a correct generation; keeping all"
        ));
        available
    } else {
        target
    }
}

pub fn curate(groups: &[TaskGroup], cfg: &CurationConfig) -> Result<Curation, CurationError> {
    cfg.validate()?;
    let mut groups = if cfg.single_op_heuristic {
        with_heuristic_types(groups)
    } else {
        groups.to_vec()
    };
    groups.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let mut warnings = Vec::new();
    let mut tallies = Tallies::default();
    let mut skipped_unknown_tasks = 0;
    let mut samples = match cfg.policy {
        Policy::Concur => {
            let part_a: Vec<CuratedSample> = groups.iter().filter_map(select_part_a).collect();
            let taken: BTreeSet<RecordKey> = part_a.iter().map(CuratedSample::key).collect();
            let part_b = select_part_b(&groups, cfg.speedup_threshold, &taken);
            let covered: HashSet<String> = part_a
                .iter()
                .chain(&part_b)
                .map(|s| s.task_id.clone())
                .collect();
            let part_c = select_part_c(&groups, &covered, cfg.single_op_target);
            skipped_unknown_tasks = part_c.skipped_unknown_tasks;
            if skipped_unknown_tasks > 0 {
                warnings.push(format!(
                    "{skipped_unknown_tasks} tasks with unknown task_type were skipped by part C"
                ));
            }
            tallies = Tallies {
                a: part_a.len(),
                b: part_b.len(),
                c: part_c.samples.len(),
            };
            let mut all = part_a;
            all.extend(part_b);
            all.extend(part_c.samples);
            all
        }
        Policy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let per_task: Vec<CuratedSample> = groups
                .iter()
                .filter_map(|g| {
                    let correct: Vec<&GroupItem> = correct_items(g).collect();
                    if correct.is_empty() {
                        return None;
                    }
                    let pick = correct[rng.random_range(0..correct.len())];
                    Some(sample(g, pick, None, Policy::Random))
                })
                .collect();
            let keep = clamp_target(cfg.target_size, per_task.len(), &mut warnings);
            index::sample(&mut rng, per_task.len(), keep)
                .into_iter()
                .map(|i| per_task[i].clone())
                .collect()
        }
        policy => {
            let mut ranked = ablation_candidates(&groups, policy);
            let keep = clamp_target(cfg.target_size, ranked.len(), &mut warnings);
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.task_id.cmp(&b.1.task_id)));
            ranked.truncate(keep);
            ranked.into_iter().map(|(_, s)| s).collect()
        }
    };
    sort_samples(&mut samples);
    Ok(Curation {
        samples,
        tallies,
        skipped_unknown_tasks,
        warnings,
    })
}

/// First line of a curated dataset file.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CurationHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: u32,
    pub config: CurationConfig,
    pub tallies: Tallies,
    pub total: usize,
    pub skipped_unknown_tasks: usize,
    pub warnings: Vec<String>,
}

impl CurationHeader {
    pub fn new(cfg: &CurationConfig, curation: &Curation) -> Self {
        CurationHeader {
            kind: "header".into(),
            version: FORMAT_VERSION,
            config: cfg.clone(),
            tallies: curation.tallies,
            total: curation.samples.len(),
            skipped_unknown_tasks: curation.skipped_unknown_tasks,
            warnings: curation.warnings.clone(),
        }
    }
}

/// Serializes a header line followed by one line per sample.
pub fn curated_to_jsonl(header: &CurationHeader, samples: &[CuratedSample]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    out.push_str(&records::to_jsonl(samples));
    out
}

pub fn parse_curated(text: &str) -> Result<(CurationHeader, Vec<CuratedSample>), CurationError> {
    let mut lines = content_lines(text);
    let (line, first) = lines.next().ok_or(CurationError::MissingHeader)?;
    let header: CurationHeader = serde_json::from_str(first).map_err(|e| CurationError::BadHeader {
        line,
        message: e.to_string(),
    })?;
    if header.kind != "header" || header.version != FORMAT_VERSION {
        return Err(CurationError::BadHeader {
            line,
            message: format!("expected a version {FORMAT_VERSION} header object"),
        });
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, l) in lines {
        let s = records::parse_curated_line(l, line_no)?;
        if !seen.insert(s.key()) {
            return Err(RecordError::Invalid {
                line: line_no,
                message: format!("duplicate curated key {}", s.key()),
            }
            .into());
        }
        samples.push(s);
    }
    Ok((header, samples))
}
