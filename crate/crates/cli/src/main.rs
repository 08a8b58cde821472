//! `kernelcur` command-line front end.
//!
//! Exit status: 0 on success, 1 when an evaluation batch fails at run time
//! (aborted batch, runner that cannot be started, cache I/O), 2 on invalid
//! usage or input. Payload files never carry timestamps; run metadata goes to
//! a `<out>.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kernelcur::analysis::{analyze, AnalysisConfig};
use kernelcur::curation::{curate, curated_to_jsonl, export_sft, parse_curated, CurationConfig, CurationHeader, PromptTemplate, SftOptions};
use kernelcur::difficulty::{classify, difficulty_to_jsonl, tier_report, DifficultyConfig, DifficultySummary};
use kernelcur::harness::{
    evaluate, mock_runner, parse_fixture, spawn_external_runner, Device, ExternalOptions, HarnessError, MockMode, ResultCache,
    RunConfig, Runner, TimingAgg,
};
use kernelcur::metrics::{self, MetricConfig};
use kernelcur::records::{self, count_summary, group_by_task, ReadOptions, TaskGroup};
use kernelcur::report::{metric_table, render_table};
use kernelcur::{write_atomic, GenerationRecord, Policy};

const CACHE_ENV: &str = "KERNELCUR_CACHE_DIR";

#[derive(Parser)]
#[command(name = "kernelcur", version, about = "Evaluate, score, curate and tier generated GPU kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every record through a runner and write one eval line per record.
    Evaluate(EvaluateArgs),
    /// Select training samples from evaluated records.
    Curate(CurateArgs),
    /// Reasoning-length statistics: accuracy by length bin, box stats, correlation.
    Analyze(AnalyzeArgs),
    /// Tier tasks by their average reasoning length.
    Difficulty(DifficultyArgs),
    /// Render curated samples as prompt/response training examples.
    ExportSft(ExportSftArgs),
    /// Print Exec / fast_p / pass@k / geometric-mean speedup tables.
    Report(ReportArgs),
}

/// How candidates get judged.
#[derive(Clone, Debug)]
enum RunnerSpec {
    Hashed,
    Scripted(PathBuf),
    Command(String),
}

impl FromStr for RunnerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "mock:hashed" {
            Ok(RunnerSpec::Hashed)
        } else if let Some(p) = s.strip_prefix("mock:scripted:").filter(|p| !p.is_empty()) {
            Ok(RunnerSpec::Scripted(PathBuf::from(p)))
        } else if let Some(c) = s.strip_prefix("cmd:").filter(|c| !c.trim().is_empty()) {
            Ok(RunnerSpec::Command(c.to_string()))
        } else {
            Err("expected mock:hashed, mock:scripted:<fixture> or cmd:<shell command>".into())
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Median,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeviceArg {
    Gpu,
    Cpu,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Concur,
    Random,
    MaxLen,
    MinLen,
    SpeedupFirst,
}

#[derive(Args)]
struct RecordInput {
    /// Generation records (one JSON object per line).
    #[arg(long)]
    records: PathBuf,
    /// Fill a missing reasoning_tokens with a whitespace token count (flagged approximate) [default: off].
    #[arg(long)]
    approximate_tokens: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: RecordInput,
    /// mock:hashed, mock:scripted:<fixture.jsonl> or cmd:<shell command>.
    #[arg(long)]
    runner: RunnerSpec,
    /// Eval results file to write.
    #[arg(long)]
    out: PathBuf,
    /// Write the run summary here instead of printing it to stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Persistent result cache directory; the KERNELCUR_CACHE_DIR environment variable takes precedence [default: in-memory only].
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Concurrent runner sessions.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Untimed iterations before timing.
    #[arg(long, default_value_t = 3)]
    warmup_iters: u32,
    /// Timed iterations per measurement.
    #[arg(long, default_value_t = 10)]
    timed_iters: u32,
    /// How timed iterations are aggregated.
    #[arg(long, value_enum, default_value = "median")]
    timing_agg: AggArg,
    /// Random input sets checked for correctness.
    #[arg(long, default_value_t = 5)]
    n_input_seeds: u32,
    /// Absolute tolerance of the output comparison.
    #[arg(long, default_value_t = 0.01)]
    atol: f64,
    /// Relative tolerance of the output comparison.
    #[arg(long, default_value_t = 0.01)]
    rtol: f64,
    /// Seconds a single candidate may take before it is reported as a timeout.
    #[arg(long, default_value_t = 300.0)]
    timeout_s: f64,
    /// Device the runner must support.
    #[arg(long, value_enum, default_value = "gpu")]
    device: DeviceArg,
    /// Restarts of a crashed cmd: runner allowed per request.
    #[arg(long, default_value_t = 2)]
    retries: u32,
}

#[derive(Args)]
struct JoinedInput {
    #[command(flatten)]
    input: RecordInput,
    /// Eval results matching the records.
    #[arg(long)]
    evals: PathBuf,
}

#[derive(Args)]
struct CurateArgs {
    #[command(flatten)]
    joined: JoinedInput,
    /// Curated dataset to write (header line, then one sample per line).
    #[arg(long)]
    out: PathBuf,
    /// Selection policy; the others are single-rule ablations.
    #[arg(long, value_enum, default_value = "concur")]
    policy: PolicyArg,
    /// Speedup a correct generation must exceed to be kept for its speed alone.
    #[arg(long, default_value_t = 5.0)]
    speedup_threshold: f64,
    /// Cap on single-operator balance samples; 0 keeps every eligible task.
    #[arg(long, default_value_t = 0)]
    single_op_target: usize,
    /// Number of tasks kept by the ablation policies.
    #[arg(long, default_value_t = 4892)]
    target_size: usize,
    /// Seed of the random policy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Guess the type of untagged tasks from their source [default: off].
    #[arg(long)]
    single_op_heuristic: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    joined: JoinedInput,
    /// Report file to write (a single JSON object).
    #[arg(long)]
    out: PathBuf,
    /// Width of the reasoning-length bins, in tokens.
    #[arg(long, default_value_t = 1000)]
    bin_width: u64,
    /// Correlate over every evaluated generation instead of correct ones only [default: off].
    #[arg(long)]
    include_incorrect: bool,
}

#[derive(Args)]
struct DifficultyArgs {
    #[command(flatten)]
    input: RecordInput,
    /// Eval results; adds per-tier exec rate and speedup to the summary [default: none].
    #[arg(long)]
    evals: Option<PathBuf>,
    /// Labels file to write (one label per line, then a summary line).
    #[arg(long)]
    out: PathBuf,
    /// Tasks with average reasoning length below this are easy.
    #[arg(long, default_value_t = 4000.0)]
    easy_max: f64,
    /// Tasks with average reasoning length above this are hard.
    #[arg(long, default_value_t = 8500.0)]
    hard_min: f64,
    /// Tasks with fewer generations are flagged low-confidence.
    #[arg(long, default_value_t = 10)]
    min_generations: usize,
    /// Generations per task used for the per-tier metrics (needs --evals).
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct ExportSftArgs {
    /// Curated dataset produced by `curate`.
    #[arg(long)]
    curated: PathBuf,
    #[command(flatten)]
    input: RecordInput,
    /// Examples file to write.
    #[arg(long)]
    out: PathBuf,
    /// Prompt template file with $ref_arch_torch, $ref_arch_kernel and $code [default: built-in template].
    #[arg(long)]
    template: Option<PathBuf>,
    /// Text opening the reasoning block; \n and \t are unescaped.
    #[arg(long, default_value = "<think>\\n")]
    think_open: String,
    /// Text closing the reasoning block; \n and \t are unescaped.
    #[arg(long, default_value = "\\n</think>\\n\\n")]
    think_close: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    joined: JoinedInput,
    /// fast_p threshold; repeat for several rows.
    #[arg(long = "p", default_values_t = vec![1.0])]
    p: Vec<f64>,
    /// Generations per task for pass@k.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Output format.
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error plus the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

type CmdResult = Result<Vec<PathBuf>, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return usage_error(e),
    };
    let started = SystemTime::now();
    let clock = Instant::now();
    let (name, result) = match &cli.command {
        Command::Evaluate(a) => ("evaluate", cmd_evaluate(a)),
        Command::Curate(a) => ("curate", cmd_curate(a)),
        Command::Analyze(a) => ("analyze", cmd_analyze(a)),
        Command::Difficulty(a) => ("difficulty", cmd_difficulty(a)),
        Command::ExportSft(a) => ("export-sft", cmd_export_sft(a)),
        Command::Report(a) => ("report", cmd_report(a)),
    };
    match result {
        Ok(outputs) => {
            for out in outputs {
                if let Err(e) = write_sidecar(&out, name, started, clock) {
                    log::warn!("cannot write run metadata for {}: {e:#}", out.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("kernelcur {name}: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Prints a parse error followed by the usage of the subcommand involved;
/// clap leaves the usage out of value errors.
fn usage_error(e: clap::Error) -> ExitCode {
    let _ = e.print();
    if !e.use_stderr() {
        return ExitCode::SUCCESS;
    }
    let mut cmd = Cli::command();
    cmd.build();
    let rendered = e.render().to_string();
    if !rendered.contains("Usage:") {
        let sub = std::env::args().nth(1).unwrap_or_default();
        let usage = match cmd.find_subcommand_mut(&sub) {
            Some(sc) => sc.render_usage(),
            None => cmd.render_usage(),
        };
        eprintln!("\n{usage}");
    }
    ExitCode::from(2)
}

fn write_sidecar(out: &Path, command: &str, started: SystemTime, clock: Instant) -> anyhow::Result<()> {
    let mut name = out.file_name().context("output path has no file name")?.to_os_string();
    name.push(".meta.json");
    let meta = json!({
        "tool": "kernelcur",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "started_unix_s": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        "elapsed_s": clock.elapsed().as_secs_f64(),
    });
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    write_atomic(&out.with_file_name(name), text.as_bytes())?;
    Ok(())
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn load_records(input: &RecordInput) -> Result<Vec<GenerationRecord>, Failure> {
    let opts = ReadOptions {
        approximate_tokens: input.approximate_tokens,
    };
    records::read_records_with(&input.records, opts)
        .with_context(|| format!("reading {}", input.records.display()))
        .map_err(invalid)
}

fn load_groups(joined: &JoinedInput) -> Result<(Vec<GenerationRecord>, Vec<TaskGroup>), Failure> {
    let recs = load_records(&joined.input)?;
    let evals = records::read_evals(&joined.evals)
        .with_context(|| format!("reading {}", joined.evals.display()))
        .map_err(invalid)?;
    let grouping = group_by_task(&recs, &evals).map_err(invalid)?;
    if !grouping.unevaluated.is_empty() {
        log::warn!("{} records have no eval result", grouping.unevaluated.len());
    }
    Ok((recs, grouping.groups))
}

fn cache_dir(flag: Option<&Path>) -> Option<PathBuf> {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => Some(PathBuf::from(dir)),
        _ => flag.map(Path::to_path_buf),
    }
}

fn run_config(a: &EvaluateArgs) -> RunConfig {
    RunConfig {
        warmup_iters: a.warmup_iters,
        timed_iters: a.timed_iters,
        timing_agg: match a.timing_agg {
            AggArg::Median => TimingAgg::Median,
            AggArg::Mean => TimingAgg::Mean,
        },
        n_input_seeds: a.n_input_seeds,
        atol: a.atol,
        rtol: a.rtol,
        timeout_s: a.timeout_s,
        device: match a.device {
            DeviceArg::Gpu => Device::Gpu,
            DeviceArg::Cpu => Device::Cpu,
        },
    }
}

fn harness_failure(e: HarnessError) -> Failure {
    match e {
        HarnessError::Config(_) | HarnessError::ZeroWorkers | HarnessError::Capability(_) => invalid(e),
        HarnessError::Aborted { .. } => runtime(anyhow!("{e}; finished results are cached when --cache-dir is set")),
        HarnessError::Handshake(_) | HarnessError::Cache(_) => runtime(e),
    }
}

fn cmd_evaluate(a: &EvaluateArgs) -> CmdResult {
    let cfg = run_config(a);
    cfg.validate().map_err(invalid)?;
    let recs = load_records(&a.input)?;
    let mut cache = match cache_dir(a.cache_dir.as_deref()) {
        Some(dir) => ResultCache::open(&dir)
            .with_context(|| format!("opening cache {}", dir.display()))
            .map_err(runtime)?,
        None => ResultCache::in_memory(),
    };
    let runner: Box<dyn Runner> = match &a.runner {
        RunnerSpec::Hashed => Box::new(mock_runner(MockMode::Hashed)),
        RunnerSpec::Scripted(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading fixture {}", path.display()))
                .map_err(invalid)?;
            let fixture = parse_fixture(&text)
                .with_context(|| format!("fixture {}", path.display()))
                .map_err(invalid)?;
            Box::new(mock_runner(MockMode::Scripted(fixture)))
        }
        RunnerSpec::Command(cmd) => {
            let opts = ExternalOptions {
                retries: a.retries,
                ..Default::default()
            };
            Box::new(spawn_external_runner(cmd, opts).map_err(harness_failure)?)
        }
    };
    let evaluation = evaluate(&recs, runner.as_ref(), &cfg, a.workers, &mut cache).map_err(harness_failure)?;
    write_output(&a.out, &records::to_jsonl(&evaluation.results))?;

    let grouping = group_by_task(&recs, &evaluation.results).map_err(invalid)?;
    let counts = count_summary(&grouping.groups);
    let statuses: Vec<_> = evaluation.results.iter().map(|e| e.status).collect();
    let stats = &evaluation.stats;
    let summary = json!({
        "config": cfg,
        "config_hash": cfg.config_hash(),
        "counts": counts,
        "exec_rate": metrics::exec_rate(&statuses).ok(),
        "stats": stats,
        "cache_hit_rate": (stats.n_records > 0).then(|| stats.cache_hits as f64 / stats.n_records as f64),
        "cache_corrupt_dropped": cache.corrupt_dropped(),
    });
    let mut text = serde_json::to_string_pretty(&summary).map_err(runtime)?;
    text.push('\n');
    match &a.summary {
        Some(path) => write_output(path, &text)?,
        None => print!("{text}"),
    }
    Ok(vec![a.out.clone()])
}

fn cmd_curate(a: &CurateArgs) -> CmdResult {
    let cfg = CurationConfig {
        policy: match a.policy {
            PolicyArg::Concur => Policy::Concur,
            PolicyArg::Random => Policy::Random,
            PolicyArg::MaxLen => Policy::MaxLen,
            PolicyArg::MinLen => Policy::MinLen,
            PolicyArg::SpeedupFirst => Policy::SpeedupFirst,
        },
        speedup_threshold: a.speedup_threshold,
        single_op_target: a.single_op_target,
        target_size: a.target_size,
        seed: a.seed,
        single_op_heuristic: a.single_op_heuristic,
    };
    cfg.validate().map_err(invalid)?;
    let (_, groups) = load_groups(&a.joined)?;
    let curation = curate(&groups, &cfg).map_err(invalid)?;
    for w in &curation.warnings {
        log::warn!("{w}");
    }
    let header = CurationHeader::new(&cfg, &curation);
    write_output(&a.out, &curated_to_jsonl(&header, &curation.samples))?;
    eprintln!(
        "curated {} samples (A={} B={} C={})",
        curation.samples.len(),
        curation.tallies.a,
        curation.tallies.b,
        curation.tallies.c
    );
    Ok(vec![a.out.clone()])
}

fn cmd_analyze(a: &AnalyzeArgs) -> CmdResult {
    let cfg = AnalysisConfig {
        bin_width: a.bin_width,
        include_incorrect: a.include_incorrect,
    };
    let (_, groups) = load_groups(&a.joined)?;
    let report = analyze(&groups, &cfg).map_err(invalid)?;
    let mut text = serde_json::to_string(&report).map_err(runtime)?;
    text.push('\n');
    write_output(&a.out, &text)?;
    Ok(vec![a.out.clone()])
}

fn cmd_difficulty(a: &DifficultyArgs) -> CmdResult {
    let cfg = DifficultyConfig {
        easy_max: a.easy_max,
        hard_min: a.hard_min,
        min_generations: a.min_generations,
    };
    cfg.validate().map_err(invalid)?;
    let recs = load_records(&a.input)?;
    let evals = match &a.evals {
        Some(path) => records::read_evals(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(invalid)?,
        None => Vec::new(),
    };
    let groups = group_by_task(&recs, &evals).map_err(invalid)?.groups;
    let labels = classify(&groups, &cfg).map_err(invalid)?;
    let mut summary = DifficultySummary::new(&cfg, &labels);
    if a.evals.is_some() {
        summary.k = Some(a.k);
        summary.tiers = Some(tier_report(&labels, &groups, a.k).map_err(invalid)?);
    }
    write_output(&a.out, &difficulty_to_jsonl(&labels, &summary))?;
    Ok(vec![a.out.clone()])
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn cmd_export_sft(a: &ExportSftArgs) -> CmdResult {
    let template = match &a.template {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading template {}", path.display()))
                .map_err(invalid)?;
            PromptTemplate::new(text)
                .with_context(|| format!("template {}", path.display()))
                .map_err(invalid)?
        }
        None => PromptTemplate::default(),
    };
    let text = fs::read_to_string(&a.curated)
        .with_context(|| format!("reading {}", a.curated.display()))
        .map_err(invalid)?;
    let (_, samples) = parse_curated(&text)
        .with_context(|| format!("curated file {}", a.curated.display()))
        .map_err(invalid)?;
    let recs = load_records(&a.input)?;
    let opts = SftOptions {
        think_open: unescape(&a.think_open),
        think_close: unescape(&a.think_close),
        ..Default::default()
    };
    let examples = export_sft(&samples, &recs, &template, &opts).map_err(invalid)?;
    write_output(&a.out, &records::to_jsonl(&examples))?;
    Ok(vec![a.out.clone()])
}

fn cmd_report(a: &ReportArgs) -> CmdResult {
    let cfg = MetricConfig {
        p_thresholds: a.p.clone(),
        k: a.k,
    };
    cfg.validate().map_err(invalid)?;
    let (_, groups) = load_groups(&a.joined)?;
    let table = metric_table(&groups, &cfg).map_err(invalid)?;
    let text = match a.format {
        Format::Text => render_table(&table, &cfg),
        Format::Json => {
            let mut t = serde_json::to_string(&json!({ "config": cfg, "columns": table })).map_err(runtime)?;
            t.push('\n');
            t
        }
    };
    match &a.out {
        Some(path) => {
            write_output(path, &text)?;
            Ok(vec![path.clone()])
        }
        None => {
            print!("{text}");
            Ok(Vec::new())
        }
    }
}
