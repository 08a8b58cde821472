//! Supervised fine-tuning export: one (prompt, response) pair per curated
//! sample, with loss applied to the response only.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::{PromptTemplate, FEW_SHOT_KERNEL, FEW_SHOT_TORCH};
use crate::records::{CuratedSample, GenerationRecord, RecordKey};

#[derive(Debug, Error, PartialEq)]
pub enum SftError {
    #[error("curated sample {0} has no matching record")]
    Unresolved(RecordKey),
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct SftExample {
    pub prompt: String,
    pub response: String,
    pub loss_on: String,
}

#[derive(Clone, Debug)]
pub struct SftOptions {
    pub think_open: String,
    pub think_close: String,
    pub few_shot_torch: String,
    pub few_shot_kernel: String,
}

impl Default for SftOptions {
    fn default() -> Self {
        SftOptions {
            think_open: "<think>\n".into(),
            think_close: "\n</think>\n\n".into(),
            few_shot_torch: FEW_SHOT_TORCH.into(),
            few_shot_kernel: FEW_SHOT_KERNEL.into(),
        }
    }
}

/// Renders one example per sample, in sample order.
///
/// The response is the reasoning wrapped in the think delimiters followed by
/// the kernel source; an empty trace yields the kernel alone.
pub fn export_sft(
    samples: &[CuratedSample],
    records: &[GenerationRecord],
    template: &PromptTemplate,
    opts: &SftOptions,
) -> Result<Vec<SftExample>, SftError> {
    let lookup: HashMap<RecordKey, &GenerationRecord> =
        records.iter().map(|r| (r.key(), r)).collect();
    samples
        .iter()
        .map(|s| {
            let rec = lookup.get(&s.key()).ok_or_else(|| SftError::Unresolved(s.key()))?;
            let prompt = template.render(&opts.few_shot_torch, &opts.few_shot_kernel, &rec.task_source);
            let response = if rec.reasoning_trace.is_empty() {
                rec.kernel_source.clone()
            } else {
                format!(
                    "{}{}{}{}",
                    opts.think_open, rec.reasoning_trace, opts.think_close, rec.kernel_source
                )
            };
            Ok(SftExample {
                prompt,
                response,
                loss_on: "response".into(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::testutil::record;
    use crate::records::{Part, Policy, FORMAT_VERSION};

    fn sample_for(r: &GenerationRecord) -> CuratedSample {
        CuratedSample {
            version: FORMAT_VERSION,
            task_id: r.task_id.clone(),
            gen_index: r.gen_index,
            part: Some(Part::ShortAndFast),
            policy: Policy::Concur,
            speedup: 1.0,
            reasoning_tokens: r.reasoning_tokens,
        }
    }

    #[test]
    fn one_sample_one_example() {
        let mut rec = record("t", 0, 4);
        rec.reasoning_trace = "first fuse, then tile".into();
        let out = export_sft(&[sample_for(&rec)], std::slice::from_ref(&rec), &PromptTemplate::default(), &SftOptions::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].prompt.contains(&rec.task_source));
        assert!(out[0].response.starts_with("<think>\nfirst fuse, then tile\n</think>\n\n"));
        assert!(out[0].response.ends_with(&rec.kernel_source));
        assert_eq!(out[0].loss_on, "response");
        assert_eq!(
            serde_json::to_string(&out[0]).unwrap().find("\"prompt\""),
            Some(1)
        );
    }

    #[test]
    fn empty_trace_drops_delimiters() {
        let rec = record("t", 0, 0);
        let out = export_sft(&[sample_for(&rec)], std::slice::from_ref(&rec), &PromptTemplate::default(), &SftOptions::default()).unwrap();
        assert_eq!(out[0].response, rec.kernel_source);
    }

    #[test]
    fn unresolved_sample_is_an_error() {
        let rec = record("t", 0, 0);
        let mut s = sample_for(&rec);
        s.gen_index = 9;
        let err = export_sft(&[s], &[rec], &PromptTemplate::default(), &SftOptions::default()).unwrap_err();
        assert_eq!(err, SftError::Unresolved(RecordKey::new("t", 9)));
    }
}
