#![allow(dead_code)]

use kernelcur::records::FORMAT_VERSION;
use kernelcur::{GenerationRecord, TaskType};

pub fn record(task: &str, gen: u64, tokens: u64) -> GenerationRecord {
    GenerationRecord {
        version: FORMAT_VERSION,
        task_id: task.into(),
        gen_index: gen,
        task_source: format!("ref {task}"),
        kernel_source: format!("kernel {task}/{gen}"),
        reasoning_trace: if tokens == 0 { String::new() } else { "r".into() },
        reasoning_tokens: tokens,
        task_type: TaskType::Unknown,
        extra: Default::default(),
    }
}

/// `n` records spread over tasks of five generations each.
pub fn batch(n: usize) -> Vec<GenerationRecord> {
    (0..n).map(|i| record(&format!("task{:04}", i / 5), (i % 5) as u64, 100 + i as u64)).collect()
}

/// Shell command line running the protocol stub with `args`.
pub fn stub(args: &str) -> String {
    format!("'{}' {args}", env!("CARGO_BIN_EXE_kernelcur-stub-runner"))
}
