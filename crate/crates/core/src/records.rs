//! Canonical data model and the line-delimited files built on it.
//!
//! Every file is UTF-8 with one JSON object per line. Record and eval lines
//! carry `"version": 1`; fields the tool does not know about are kept in
//! `extra` and written back unchanged.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

/// Relative tolerance used when checking a stored speedup against its timings.
const SPEEDUP_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed object: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { line: usize, found: Value },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: duplicate key {key} (first seen on line {first})")]
    DuplicateKey {
        line: usize,
        first: usize,
        key: RecordKey,
    },
    #[error("eval {0} has no matching record")]
    UnmatchedEval(RecordKey),
    #[error("record {0} evaluated twice with differing config_hash")]
    ConflictingConfig(RecordKey),
    #[error("record {0} evaluated twice with differing results")]
    DuplicateEval(RecordKey),
    #[error("task {task_id} mixes task types {first:?} and {second:?}")]
    ConflictingTaskType {
        task_id: String,
        first: TaskType,
        second: TaskType,
    },
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    SingleOp,
    MultiOp,
    #[default]
    Unknown,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Correct,
    Incorrect,
    CompileError,
    RuntimeError,
    Timeout,
}

impl Status {
    pub const ALL: [Status; 5] = [
        Status::Correct,
        Status::Incorrect,
        Status::CompileError,
        Status::RuntimeError,
        Status::Timeout,
    ];

    pub fn is_correct(self) -> bool {
        self == Status::Correct
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Correct => "correct",
            Status::Incorrect => "incorrect",
            Status::CompileError => "compile_error",
            Status::RuntimeError => "runtime_error",
            Status::Timeout => "timeout",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of one generation: `(task_id, gen_index)`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub task_id: String,
    pub gen_index: u64,
}

impl RecordKey {
    pub fn new(task_id: impl Into<String>, gen_index: u64) -> Self {
        RecordKey {
            task_id: task_id.into(),
            gen_index,
        }
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.task_id, self.gen_index)
    }
}

/// One generated candidate together with the reasoning that produced it.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub version: u32,
    pub task_id: String,
    pub gen_index: u64,
    pub task_source: String,
    pub kernel_source: String,
    pub reasoning_trace: String,
    /// Length of the reasoning in tokens, as counted by the producer.
    pub reasoning_tokens: u64,
    #[serde(default)]
    pub task_type: TaskType,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl GenerationRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.task_id.clone(), self.gen_index)
    }

    /// A record can be sent to a runner only when both programs are present.
    pub fn is_evaluable(&self) -> bool {
        !self.task_source.trim().is_empty() && !self.kernel_source.trim().is_empty()
    }

    fn validate(&self) -> Result<(), String> {
        if self.version != FORMAT_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        if self.reasoning_trace.is_empty() && self.reasoning_tokens != 0 {
            return Err(format!(
                "empty reasoning_trace with reasoning_tokens = {}",
                self.reasoning_tokens
            ));
        }
        Ok(())
    }
}

/// Verdict of evaluating one record.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub version: u32,
    pub task_id: String,
    pub gen_index: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ref_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_kernel_ms: Option<f64>,
    pub speedup: f64,
    #[serde(default)]
    pub diagnostics: String,
    pub config_hash: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl EvalResult {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.task_id.clone(), self.gen_index)
    }

    pub fn is_correct(&self) -> bool {
        self.status.is_correct()
    }

    /// Checks the speedup/status coupling: a positive speedup exactly when
    /// the status is `correct`, and then equal to `t_ref_ms / t_kernel_ms`.
    pub fn check_consistency(&self) -> Result<(), String> {
        if !self.speedup.is_finite() || self.speedup < 0.0 {
            return Err(format!("speedup {} is not a finite non-negative number", self.speedup));
        }
        if self.status.is_correct() {
            let (Some(t_ref), Some(t_kernel)) = (self.t_ref_ms, self.t_kernel_ms) else {
                return Err("status correct without both timings".into());
            };
            if !(t_ref > 0.0 && t_kernel > 0.0 && t_ref.is_finite() && t_kernel.is_finite()) {
                return Err("status correct with non-positive timings".into());
            }
            let expected = t_ref / t_kernel;
            if self.speedup <= 0.0 {
                return Err("status correct with zero speedup".into());
            }
            if (self.speedup - expected).abs() > SPEEDUP_REL_TOL * expected.abs() {
                return Err(format!(
                    "speedup {} does not equal t_ref_ms / t_kernel_ms = {}",
                    self.speedup, expected
                ));
            }
        } else if self.speedup != 0.0 {
            return Err(format!("status {} with non-zero speedup", self.status));
        }
        Ok(())
    }
}

/// Which of the three selection rules admitted a curated sample.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    #[serde(rename = "A_short_and_fast")]
    ShortAndFast,
    #[serde(rename = "B_high_speedup")]
    HighSpeedup,
    #[serde(rename = "C_single_op_balance")]
    SingleOpBalance,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Concur,
    Random,
    MaxLen,
    MinLen,
    SpeedupFirst,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Concur => "concur",
            Policy::Random => "random",
            Policy::MaxLen => "max_len",
            Policy::MinLen => "min_len",
            Policy::SpeedupFirst => "speedup_first",
        }
    }
}

/// A selected (task, reasoning, kernel) triple.
///
/// `part` is set for the three-part policy and absent for the single-rule
/// ablation policies.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CuratedSample {
    pub version: u32,
    pub task_id: String,
    pub gen_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<Part>,
    pub policy: Policy,
    pub speedup: f64,
    pub reasoning_tokens: u64,
}

impl CuratedSample {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.task_id.clone(), self.gen_index)
    }
}

/// One generation inside a task group. `eval` is absent when the record has
/// not been evaluated yet.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupItem {
    pub record: GenerationRecord,
    pub eval: Option<EvalResult>,
}

impl GroupItem {
    pub fn is_correct(&self) -> bool {
        self.eval.as_ref().is_some_and(EvalResult::is_correct)
    }

    /// Gated speedup; unevaluated generations count as 0.
    pub fn speedup(&self) -> f64 {
        self.eval.as_ref().map_or(0.0, |e| e.speedup)
    }

    pub fn status(&self) -> Option<Status> {
        self.eval.as_ref().map(|e| e.status)
    }

    pub fn gen_index(&self) -> u64 {
        self.record.gen_index
    }

    pub fn reasoning_tokens(&self) -> u64 {
        self.record.reasoning_tokens
    }
}

/// All generations of one task, ordered by `gen_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGroup {
    pub task_id: String,
    pub task_type: TaskType,
    pub items: Vec<GroupItem>,
}

impl TaskGroup {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn has_correct(&self) -> bool {
        self.items.iter().any(GroupItem::is_correct)
    }

    /// Statuses in `gen_index` order, skipping unevaluated generations.
    pub fn statuses(&self) -> Vec<Status> {
        self.items.iter().filter_map(GroupItem::status).collect()
    }

    pub fn speedups(&self) -> Vec<f64> {
        self.items.iter().map(GroupItem::speedup).collect()
    }

    pub fn reasoning_lengths(&self) -> Vec<u64> {
        self.items.iter().map(GroupItem::reasoning_tokens).collect()
    }
}

/// Result of joining records with evals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grouping {
    pub groups: Vec<TaskGroup>,
    /// Records that had no eval; they are still present in `groups`.
    pub unevaluated: Vec<RecordKey>,
}

impl Grouping {
    /// Flattens back into (record, eval) pairs, group by group.
    pub fn flatten(&self) -> impl Iterator<Item = &GroupItem> {
        self.groups.iter().flat_map(|g| g.items.iter())
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CountSummary {
    pub n_tasks: u64,
    pub n_generations: u64,
    pub n_evaluated: u64,
    pub n_correct: u64,
    pub n_tasks_with_correct: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// Fill a missing `reasoning_tokens` with a whitespace-split count of the
    /// trace and tag the record with `"reasoning_tokens_approximate": true`.
    pub approximate_tokens: bool,
}

/// Whitespace-split token count. Only an approximation of any real tokenizer.
pub fn approximate_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

const RECORD_FIELDS: &[&str] = &[
    "version",
    "task_id",
    "gen_index",
    "task_source",
    "kernel_source",
    "reasoning_trace",
    "reasoning_tokens",
];

const EVAL_FIELDS: &[&str] = &[
    "version",
    "task_id",
    "gen_index",
    "status",
    "speedup",
    "config_hash",
];

const CURATED_FIELDS: &[&str] = &[
    "version",
    "task_id",
    "gen_index",
    "policy",
    "speedup",
    "reasoning_tokens",
];

fn parse_object(line: &str, line_no: usize) -> Result<Map<String, Value>, RecordError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(RecordError::Parse {
            line: line_no,
            message: format!("expected an object, found {}", json_kind(&other)),
        }),
        Err(e) => Err(RecordError::Parse {
            line: line_no,
            message: e.to_string(),
        }),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn typed_line<T: DeserializeOwned>(
    map: Map<String, Value>,
    line_no: usize,
    required: &[&'static str],
) -> Result<T, RecordError> {
    for &field in required {
        if !map.contains_key(field) {
            return Err(RecordError::MissingField {
                line: line_no,
                field,
            });
        }
    }
    match map.get("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(FORMAT_VERSION as u64) => {}
        Some(v) => {
            return Err(RecordError::Version {
                line: line_no,
                found: v.clone(),
            })
        }
        None => unreachable!("version is always required"),
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| RecordError::Invalid {
        line: line_no,
        message: e.to_string(),
    })
}

/// Parses one record line. `line_no` is 1-based and only used in errors.
pub fn parse_record_line(
    line: &str,
    line_no: usize,
    opts: ReadOptions,
) -> Result<GenerationRecord, RecordError> {
    let mut map = parse_object(line, line_no)?;
    if opts.approximate_tokens && !map.contains_key("reasoning_tokens") {
        let approx = match map.get("reasoning_trace") {
            Some(Value::String(s)) => approximate_token_count(s),
            _ => 0,
        };
        map.insert("reasoning_tokens".into(), Value::from(approx));
        map.insert("reasoning_tokens_approximate".into(), Value::Bool(true));
    }
    let record: GenerationRecord = typed_line(map, line_no, RECORD_FIELDS)?;
    record.validate().map_err(|message| RecordError::Invalid {
        line: line_no,
        message,
    })?;
    Ok(record)
}

pub fn parse_eval_line(line: &str, line_no: usize) -> Result<EvalResult, RecordError> {
    let map = parse_object(line, line_no)?;
    let eval: EvalResult = typed_line(map, line_no, EVAL_FIELDS)?;
    eval.check_consistency()
        .map_err(|message| RecordError::Invalid {
            line: line_no,
            message,
        })?;
    Ok(eval)
}

pub fn parse_curated_line(line: &str, line_no: usize) -> Result<CuratedSample, RecordError> {
    let map = parse_object(line, line_no)?;
    typed_line(map, line_no, CURATED_FIELDS)
}

/// Iterates over the non-blank lines of `text` with 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn check_unique<I>(keys: I) -> Result<(), RecordError>
where
    I: IntoIterator<Item = (usize, RecordKey)>,
{
    let mut seen: HashMap<RecordKey, usize> = HashMap::new();
    for (line, key) in keys {
        if let Some(&first) = seen.get(&key) {
            return Err(RecordError::DuplicateKey { line, first, key });
        }
        seen.insert(key, line);
    }
    Ok(())
}

/// Parses a whole record file held in memory.
pub fn parse_records(text: &str, opts: ReadOptions) -> Result<Vec<GenerationRecord>, RecordError> {
    let mut out = Vec::new();
    let mut lines = Vec::new();
    for (line_no, line) in content_lines(text) {
        let rec = parse_record_line(line, line_no, opts)?;
        lines.push((line_no, rec.key()));
        out.push(rec);
    }
    check_unique(lines)?;
    Ok(out)
}

pub fn parse_evals(text: &str) -> Result<Vec<EvalResult>, RecordError> {
    let mut out = Vec::new();
    let mut lines = Vec::new();
    for (line_no, line) in content_lines(text) {
        let eval = parse_eval_line(line, line_no)?;
        lines.push((line_no, eval.key()));
        out.push(eval);
    }
    check_unique(lines)?;
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<GenerationRecord>, RecordError> {
    read_records_with(path, ReadOptions::default())
}

pub fn read_records_with(
    path: &Path,
    opts: ReadOptions,
) -> Result<Vec<GenerationRecord>, RecordError> {
    parse_records(&fs::read_to_string(path)?, opts)
}

pub fn read_evals(path: &Path) -> Result<Vec<EvalResult>, RecordError> {
    parse_evals(&fs::read_to_string(path)?)
}

/// Serializes items one per line in canonical form (compact JSON, declared
/// field order, extras last in their original order, trailing newline).
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record types always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[GenerationRecord]) -> io::Result<()> {
    crate::write_atomic(path, to_jsonl(records).as_bytes())
}

pub fn write_evals(path: &Path, evals: &[EvalResult]) -> io::Result<()> {
    crate::write_atomic(path, to_jsonl(evals).as_bytes())
}

/// Joins records with evals and groups them by task.
///
/// Groups come back sorted by `task_id`, items by `gen_index`. Records
/// without an eval stay in their group with `eval: None` and are listed in
/// [`Grouping::unevaluated`].
pub fn group_by_task(
    records: &[GenerationRecord],
    evals: &[EvalResult],
) -> Result<Grouping, RecordError> {
    let record_keys: HashSet<RecordKey> = records.iter().map(GenerationRecord::key).collect();
    let mut by_key: HashMap<RecordKey, &EvalResult> = HashMap::with_capacity(evals.len());
    for eval in evals {
        let key = eval.key();
        if !record_keys.contains(&key) {
            return Err(RecordError::UnmatchedEval(key));
        }
        match by_key.get(&key) {
            Some(prev) if prev.config_hash != eval.config_hash => {
                return Err(RecordError::ConflictingConfig(key));
            }
            Some(prev) if *prev != eval => return Err(RecordError::DuplicateEval(key)),
            Some(_) => {}
            None => {
                by_key.insert(key, eval);
            }
        }
    }

    let mut tasks: BTreeMap<&str, TaskGroup> = BTreeMap::new();
    let mut unevaluated = Vec::new();
    for record in records {
        let key = record.key();
        let eval = by_key.get(&key).map(|e| (*e).clone());
        if eval.is_none() {
            unevaluated.push(key);
        }
        let group = tasks
            .entry(record.task_id.as_str())
            .or_insert_with(|| TaskGroup {
                task_id: record.task_id.clone(),
                task_type: TaskType::Unknown,
                items: Vec::new(),
            });
        match (group.task_type, record.task_type) {
            (_, TaskType::Unknown) => {}
            (TaskType::Unknown, t) => group.task_type = t,
            (a, b) if a != b => {
                return Err(RecordError::ConflictingTaskType {
                    task_id: record.task_id.clone(),
                    first: a,
                    second: b,
                })
            }
            _ => {}
        }
        group.items.push(GroupItem {
            record: record.clone(),
            eval,
        });
    }
    let mut groups: Vec<TaskGroup> = tasks.into_values().collect();
    for g in &mut groups {
        g.items.sort_by_key(GroupItem::gen_index);
    }
    unevaluated.sort();
    Ok(Grouping {
        groups,
        unevaluated,
    })
}

pub fn count_summary(groups: &[TaskGroup]) -> CountSummary {
    let mut s = CountSummary::default();
    for g in groups {
        s.n_tasks += 1;
        s.n_generations += g.items.len() as u64;
        let mut any = false;
        for item in &g.items {
            if item.eval.is_some() {
                s.n_evaluated += 1;
            }
            if item.is_correct() {
                s.n_correct += 1;
                any = true;
            }
        }
        if any {
            s.n_tasks_with_correct += 1;
        }
    }
    s
}
