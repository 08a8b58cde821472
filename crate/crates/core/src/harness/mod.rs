//! Evaluation of generation records through pluggable runners.
//!
//! A [`Runner`] hands out sessions; each worker thread owns one session and
//! processes one request at a time. Results are collected on the calling
//! thread, which is the only place the cache is touched, and are returned in
//! input order whatever the completion order was.

mod cache;
mod config;
mod external;
mod mock;
pub mod protocol;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics;
use crate::records::{EvalResult, GenerationRecord, RecordKey, Status, FORMAT_VERSION};

pub use cache::{cache_key, ResultCache};
pub use config::{Device, RunConfig, TimingAgg};
pub use external::{spawn_external_runner, ExternalOptions, ExternalRunner};
pub use mock::{hashed_outcome, mock_runner, parse_fixture, MockMode, MockRunner};
pub use protocol::{Frame, RunnerRequest, RunnerResponse};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("workers must be at least 1")]
    ZeroWorkers,
    #[error("runner does not support device {0}")]
    Capability(&'static str),
    #[error("runner handshake failed: {0}")]
    Handshake(String),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
    #[error("batch aborted: {reason} ({} of {total} records completed)", completed.len())]
    Aborted {
        reason: String,
        /// Results finished before the abort, in input order.
        completed: Vec<EvalResult>,
        total: usize,
    },
}

/// A wire-protocol breach that makes the rest of the batch untrustworthy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolViolation(pub String);

/// What a runner said about one candidate, minus the request id.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Outcome {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ref_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_kernel_ms: Option<f64>,
    #[serde(default)]
    pub diagnostics: String,
}

impl From<RunnerResponse> for Outcome {
    fn from(r: RunnerResponse) -> Self {
        Outcome {
            status: r.status,
            t_ref_ms: r.t_ref_ms,
            t_kernel_ms: r.t_kernel_ms,
            diagnostics: r.diagnostics,
        }
    }
}

/// A session's answer to one request.
#[derive(Clone, Debug, PartialEq)]
pub struct Reply {
    pub response: RunnerResponse,
    /// Made up by the harness (crash, timeout) rather than sent by the
    /// runner; such replies are never cached.
    pub synthesized: bool,
}

pub trait Runner: Sync {
    fn capabilities(&self) -> Vec<Device>;
    fn open_session(&self) -> Result<Box<dyn RunnerSession + '_>, HarnessError>;
    /// Requests handed to the runner so far.
    fn invocations(&self) -> u64;
}

pub trait RunnerSession: Send {
    /// Evaluates one request. `key` identifies the first record that needed
    /// this request; external runners ignore it.
    fn run(&mut self, key: &RecordKey, request: &RunnerRequest) -> Result<Reply, ProtocolViolation>;
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub n_records: usize,
    pub cache_hits: usize,
    /// Records sharing a cache key with an earlier record of the same batch.
    pub deduplicated: usize,
    pub not_evaluable: usize,
    pub runner_calls: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub results: Vec<EvalResult>,
    pub stats: EvalStats,
}

/// Turns a runner outcome into an [`EvalResult`] that satisfies the
/// speedup/status invariants, noting any repair in the diagnostics.
pub fn to_eval_result(key: &RecordKey, outcome: &Outcome, config_hash: &str) -> EvalResult {
    let mut diagnostics = outcome.diagnostics.clone();
    let mut note = |msg: String| {
        if !diagnostics.is_empty() {
            diagnostics.push_str("; ");
        }
        diagnostics.push_str("[harness] ");
        diagnostics.push_str(&msg);
    };
    let mut status = outcome.status;
    let mut timings = None;
    if status == Status::Correct {
        match (outcome.t_ref_ms, outcome.t_kernel_ms) {
            (Some(r), Some(k)) => match metrics::speedup(r, k, true) {
                Ok(s) if s.is_finite() && s > 0.0 => timings = Some((r, k, s)),
                Ok(s) => note(format!("inconsistent response: speedup {s} from t_ref_ms {r} and t_kernel_ms {k}")),
                Err(e) => note(format!("inconsistent response: {e}")),
            },
            _ => note("inconsistent response: status correct without both timings".into()),
        }
        if timings.is_none() {
            status = Status::RuntimeError;
        }
    } else if outcome.t_ref_ms.is_some() || outcome.t_kernel_ms.is_some() {
        note(format!("timings ignored for status {status}"));
    }
    EvalResult {
        version: FORMAT_VERSION,
        task_id: key.task_id.clone(),
        gen_index: key.gen_index,
        status,
        t_ref_ms: timings.map(|t| t.0),
        t_kernel_ms: timings.map(|t| t.1),
        speedup: timings.map_or(0.0, |t| t.2),
        diagnostics,
        config_hash: config_hash.to_string(),
        extra: Default::default(),
    }
}

enum Slot {
    Done(Outcome),
    Pending(usize),
}

/// Evaluates `records` with up to `workers` concurrent sessions.
///
/// Identical (task_source, kernel_source, config) triples are sent once per
/// batch and served from `cache` afterwards. A protocol violation stops the
/// batch and returns what finished in [`HarnessError::Aborted`].
pub fn evaluate(
    records: &[GenerationRecord],
    runner: &dyn Runner,
    cfg: &RunConfig,
    workers: usize,
    cache: &mut ResultCache,
) -> Result<Evaluation, HarnessError> {
    cfg.validate()?;
    if workers == 0 {
        return Err(HarnessError::ZeroWorkers);
    }
    if !runner.capabilities().contains(&cfg.device) {
        return Err(HarnessError::Capability(cfg.device.as_str()));
    }
    let config_hash = cfg.config_hash();
    let mut stats = EvalStats {
        n_records: records.len(),
        ..Default::default()
    };

    // Resolve what we can without the runner.
    let mut slots = Vec::with_capacity(records.len());
    let mut pending: Vec<(String, usize)> = Vec::new();
    let mut pending_by_key: HashMap<String, usize> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        if !rec.is_evaluable() {
            stats.not_evaluable += 1;
            let which = if rec.task_source.trim().is_empty() {
                "task_source"
            } else {
                "kernel_source"
            };
            slots.push(Slot::Done(Outcome {
                status: Status::CompileError,
                t_ref_ms: None,
                t_kernel_ms: None,
                diagnostics: format!("[harness] record not evaluable: empty {which}"),
            }));
            continue;
        }
        let key = cache_key(&rec.task_source, &rec.kernel_source, &config_hash);
        if let Some(hit) = cache.get(&key) {
            stats.cache_hits += 1;
            slots.push(Slot::Done(hit));
        } else if let Some(&p) = pending_by_key.get(&key) {
            stats.deduplicated += 1;
            slots.push(Slot::Pending(p));
        } else {
            pending_by_key.insert(key.clone(), pending.len());
            slots.push(Slot::Pending(pending.len()));
            pending.push((key, i));
        }
    }

    let mut outcomes: Vec<Option<Outcome>> = vec![None; pending.len()];
    let mut abort_reason: Option<String> = None;
    if !pending.is_empty() {
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<(usize, Result<Reply, ProtocolViolation>)>();
        let n_threads = workers.min(pending.len());
        std::thread::scope(|scope| {
            for _ in 0..n_threads {
                let tx = tx.clone();
                let (next, stop, pending, cfg) = (&next, &stop, &pending, cfg);
                scope.spawn(move || {
                    let mut session = match runner.open_session() {
                        Ok(s) => s,
                        Err(e) => {
                            stop.store(true, Ordering::SeqCst);
                            let _ = tx.send((usize::MAX, Err(ProtocolViolation(e.to_string()))));
                            return;
                        }
                    };
                    while !stop.load(Ordering::SeqCst) {
                        let p = next.fetch_add(1, Ordering::SeqCst);
                        let Some((_, rec_idx)) = pending.get(p) else { break };
                        let rec = &records[*rec_idx];
                        let request = RunnerRequest {
                            id: format!("r{p}"),
                            task_source: rec.task_source.clone(),
                            kernel_source: rec.kernel_source.clone(),
                            config: cfg.clone(),
                        };
                        let reply = session.run(&rec.key(), &request);
                        if reply.is_err() {
                            stop.store(true, Ordering::SeqCst);
                        }
                        if tx.send((p, reply)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            for (p, reply) in rx {
                match reply {
                    Ok(reply) => {
                        stats.runner_calls += 1;
                        let outcome = Outcome::from(reply.response);
                        if !reply.synthesized {
                            if let Err(e) = cache.put(&pending[p].0, &outcome) {
                                log::warn!("cache write failed: {e}");
                            }
                        }
                        outcomes[p] = Some(outcome);
                    }
                    Err(ProtocolViolation(msg)) => {
                        abort_reason.get_or_insert(msg);
                    }
                }
            }
        });
    }

    let resolve = |slot: &Slot| -> Option<Outcome> {
        match slot {
            Slot::Done(o) => Some(o.clone()),
            Slot::Pending(p) => outcomes[*p].clone(),
        }
    };
    let results: Vec<Option<EvalResult>> = records
        .iter()
        .zip(&slots)
        .map(|(rec, slot)| resolve(slot).map(|o| to_eval_result(&rec.key(), &o, &config_hash)))
        .collect();

    if let Some(reason) = abort_reason {
        return Err(HarnessError::Aborted {
            reason,
            completed: results.into_iter().flatten().collect(),
            total: records.len(),
        });
    }
    Ok(Evaluation {
        results: results
            .into_iter()
            .map(|r| r.expect("every slot resolved when no abort happened"))
            .collect(),
        stats,
    })
}
