//! In-process runners with deterministic verdicts.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::config::Device;
use super::protocol::{RunnerRequest, RunnerResponse};
use super::{HarnessError, Outcome, ProtocolViolation, Reply, Runner, RunnerSession};
use crate::records::{content_lines, RecordError, RecordKey, Status};

pub enum MockMode {
    /// Fixed verdict per `(task_id, gen_index)`.
    Scripted(HashMap<RecordKey, Outcome>),
    /// Verdict derived from a digest of the kernel source.
    Hashed,
}

pub struct MockRunner {
    mode: MockMode,
    invocations: AtomicU64,
}

pub fn mock_runner(mode: MockMode) -> MockRunner {
    MockRunner {
        mode,
        invocations: AtomicU64::new(0),
    }
}

/// Status from the digest modulo 4 (correct, incorrect, compile_error,
/// runtime_error); timings in (0.05, 65.6) ms from the leading digest bytes.
pub fn hashed_outcome(kernel_source: &str) -> Outcome {
    let d = Sha256::digest(kernel_source.as_bytes());
    let status = match d[31] % 4 {
        0 => Status::Correct,
        1 => Status::Incorrect,
        2 => Status::CompileError,
        _ => Status::RuntimeError,
    };
    let ms = |hi: u8, lo: u8| 0.05 + f64::from(u16::from_be_bytes([hi, lo])) / 1000.0;
    let correct = status == Status::Correct;
    Outcome {
        status,
        t_ref_ms: correct.then(|| ms(d[0], d[1])),
        t_kernel_ms: correct.then(|| ms(d[2], d[3])),
        diagnostics: if correct {
            String::new()
        } else {
            format!("hashed mock verdict {status}")
        },
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    task_id: String,
    gen_index: u64,
    status: Status,
    #[serde(default)]
    t_ref_ms: Option<f64>,
    #[serde(default)]
    t_kernel_ms: Option<f64>,
    #[serde(default)]
    diagnostics: String,
}

/// Parses a scripted fixture: one
/// `{"task_id","gen_index","status","t_ref_ms"?,"t_kernel_ms"?,"diagnostics"?}`
/// object per line.
pub fn parse_fixture(text: &str) -> Result<HashMap<RecordKey, Outcome>, RecordError> {
    let mut out = HashMap::new();
    let mut first_line = HashMap::new();
    for (line_no, line) in content_lines(text) {
        let f: FixtureLine = serde_json::from_str(line).map_err(|e| RecordError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let key = RecordKey::new(f.task_id, f.gen_index);
        if let Some(&first) = first_line.get(&key) {
            return Err(RecordError::DuplicateKey {
                line: line_no,
                first,
                key,
            });
        }
        first_line.insert(key.clone(), line_no);
        out.insert(
            key,
            Outcome {
                status: f.status,
                t_ref_ms: f.t_ref_ms,
                t_kernel_ms: f.t_kernel_ms,
                diagnostics: f.diagnostics,
            },
        );
    }
    Ok(out)
}

impl Runner for MockRunner {
    fn capabilities(&self) -> Vec<Device> {
        vec![Device::Gpu, Device::Cpu]
    }

    fn open_session(&self) -> Result<Box<dyn RunnerSession + '_>, HarnessError> {
        Ok(Box::new(MockSession { runner: self }))
    }

    fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }
}

struct MockSession<'a> {
    runner: &'a MockRunner,
}

impl RunnerSession for MockSession<'_> {
    fn run(&mut self, key: &RecordKey, request: &RunnerRequest) -> Result<Reply, ProtocolViolation> {
        self.runner.invocations.fetch_add(1, Ordering::SeqCst);
        let outcome = match &self.runner.mode {
            MockMode::Hashed => hashed_outcome(&request.kernel_source),
            MockMode::Scripted(map) => map
                .get(key)
                .cloned()
                .ok_or_else(|| ProtocolViolation(format!("scripted runner has no verdict for {key}")))?,
        };
        Ok(Reply {
            response: RunnerResponse {
                id: request.id.clone(),
                status: outcome.status,
                t_ref_ms: outcome.t_ref_ms,
                t_kernel_ms: outcome.t_kernel_ms,
                diagnostics: outcome.diagnostics,
            },
            synthesized: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_is_deterministic_and_positive() {
        for i in 0..500 {
            let src = format!("kernel {i}");
            let a = hashed_outcome(&src);
            assert_eq!(a, hashed_outcome(&src));
            if a.status == Status::Correct {
                assert!(a.t_ref_ms.unwrap() > 0.0 && a.t_kernel_ms.unwrap() > 0.0);
            } else {
                assert!(a.t_ref_ms.is_none() && a.t_kernel_ms.is_none());
            }
        }
    }

    #[test]
    fn hashed_covers_four_classes() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..200 {
            seen.insert(hashed_outcome(&format!("k{i}")).status);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn fixture_parsing() {
        let text = r#"{"task_id":"a","gen_index":0,"status":"correct","t_ref_ms":2.0,"t_kernel_ms":1.0}
{"task_id":"a","gen_index":1,"status":"incorrect","diagnostics":"shape"}
"#;
        let map = parse_fixture(text).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map[&RecordKey::new("a", 1)].diagnostics, "shape");
        let dup = format!("{text}{}", text.lines().next().unwrap());
        assert!(matches!(parse_fixture(&dup), Err(RecordError::DuplicateKey { line: 3, .. })));
        assert!(parse_fixture(r#"{"task_id":"a","gen_index":0,"status":"ok"}"#).is_err());
    }
}
