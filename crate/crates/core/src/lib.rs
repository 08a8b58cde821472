//! Evaluation and curation pipeline for generated GPU kernels paired with
//! reasoning traces.
//!
//! The crate is organised the way data flows through it:
//!
//! * [`records`] reads and writes the line-delimited record, eval and
//!   curated files and joins records with their evaluations.
//! * [`harness`] evaluates records through a runner (in-process mock or an
//!   external process speaking the newline-delimited JSON wire protocol).
//! * [`metrics`] holds the scalar metrics: gated speedup, fast_p, exec rate,
//!   pass@k, average reasoning length and geometric-mean speedup.
//! * [`analysis`] computes length-bin accuracy, box statistics and the
//!   length/speedup Pearson correlation.
//! * [`curation`] selects training samples and renders SFT examples.
//! * [`difficulty`] tiers tasks by their average reasoning length.
//! * [`report`] builds the per-level metric tables printed by the CLI.

pub mod analysis;
pub mod curation;
pub mod difficulty;
pub mod harness;
pub mod metrics;
pub mod records;
pub mod report;
pub mod special;
mod util;

pub use records::{
    CuratedSample, EvalResult, GenerationRecord, Part, Policy, RecordKey, Status, TaskGroup,
    TaskType,
};
pub use util::write_atomic;
