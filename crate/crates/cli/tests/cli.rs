use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn kernelcur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernelcur"))
        .args(args)
        .env_remove("KERNELCUR_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Evaluates the five-task fixture with its scripted verdicts.
fn five_task_evals(dir: &Path) -> (PathBuf, PathBuf) {
    let records = data("five_tasks.records.jsonl");
    let evals = dir.join("evals.jsonl");
    let runner = format!("mock:scripted:{}", p(&data("five_tasks.verdicts.jsonl")));
    let out = kernelcur(&[
        "evaluate",
        "--records",
        p(&records),
        "--runner",
        &runner,
        "--out",
        p(&evals),
        "--summary",
        p(&dir.join("summary.json")),
    ]);
    ok(&out);
    (records, evals)
}

#[test]
fn evaluate_writes_one_line_per_record_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let (_, evals) = five_task_evals(dir.path());
    let text = fs::read_to_string(&evals).unwrap();
    assert_eq!(text.lines().count(), 11);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["counts"]["n_generations"], 11);
    assert_eq!(summary["counts"]["n_correct"], 7);
    assert_eq!(summary["counts"]["n_tasks_with_correct"], 4);
    let exec = summary["exec_rate"].as_f64().unwrap();
    assert!((exec - 7.0 / 11.0).abs() < 1e-12);
    // run metadata lives next to the payload, not in it
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("evals.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "evaluate");
    assert!(!text.contains("started"));
}

#[test]
fn unknown_runner_scheme_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = kernelcur(&[
        "evaluate",
        "--records",
        p(&data("five_tasks.records.jsonl")),
        "--runner",
        "docker:image",
        "--out",
        p(&dir.path().join("e.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage: kernelcur evaluate"), "{err}");
    assert!(!dir.path().join("e.jsonl").exists());
}

#[test]
fn cached_rerun_is_identical_and_all_hits() {
    let dir = TempDir::new().unwrap();
    let cache = dir.path().join("cache");
    let run = |out: &Path, summary: &Path| {
        let o = kernelcur(&[
            "evaluate",
            "--records",
            p(&data("five_tasks.records.jsonl")),
            "--runner",
            "mock:hashed",
            "--out",
            p(out),
            "--summary",
            p(summary),
            "--cache-dir",
            p(&cache),
            "--workers",
            "3",
        ]);
        ok(&o);
        let s: Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
        s
    };
    let first = run(&dir.path().join("a.jsonl"), &dir.path().join("a.json"));
    let second = run(&dir.path().join("b.jsonl"), &dir.path().join("b.json"));
    assert_eq!(first["stats"]["cache_hits"], 0);
    assert_eq!(second["cache_hit_rate"], 1.0);
    assert_eq!(second["stats"]["runner_calls"], 0);
    assert_eq!(
        fs::read(dir.path().join("a.jsonl")).unwrap(),
        fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}

#[test]
fn cache_env_var_overrides_the_flag() {
    let dir = TempDir::new().unwrap();
    let from_env = dir.path().join("env-cache");
    let from_flag = dir.path().join("flag-cache");
    let out = Command::new(env!("CARGO_BIN_EXE_kernelcur"))
        .args([
            "evaluate",
            "--records",
            p(&data("five_tasks.records.jsonl")),
            "--runner",
            "mock:hashed",
            "--out",
            p(&dir.path().join("e.jsonl")),
            "--cache-dir",
            p(&from_flag),
        ])
        .env("KERNELCUR_CACHE_DIR", &from_env)
        .output()
        .unwrap();
    ok(&out);
    assert!(from_env.join("index.jsonl").exists());
    assert!(!from_flag.exists());
}

#[test]
fn scripted_fixture_missing_a_record_aborts_with_exit_1() {
    let dir = TempDir::new().unwrap();
    let fixture = dir.path().join("partial.jsonl");
    let full = fs::read_to_string(data("five_tasks.verdicts.jsonl")).unwrap();
    fs::write(&fixture, full.lines().take(4).collect::<Vec<_>>().join("\n")).unwrap();
    let out_path = dir.path().join("e.jsonl");
    let out = kernelcur(&[
        "evaluate",
        "--records",
        p(&data("five_tasks.records.jsonl")),
        "--runner",
        &format!("mock:scripted:{}", p(&fixture)),
        "--out",
        p(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch aborted"));
    assert!(!out_path.exists(), "no partial output");
}

#[test]
fn curate_concur_on_five_tasks() {
    let dir = TempDir::new().unwrap();
    let (records, evals) = five_task_evals(dir.path());
    let curated = dir.path().join("curated.jsonl");
    ok(&kernelcur(&[
        "curate",
        "--records",
        p(&records),
        "--evals",
        p(&evals),
        "--out",
        p(&curated),
    ]));
    let text = fs::read_to_string(&curated).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["type"], "header");
    assert_eq!(lines[0]["tallies"], serde_json::json!({"A": 2, "B": 1, "C": 1}));
    assert_eq!(lines[0]["config"]["speedup_threshold"], 5.0);
    let keys: Vec<(String, u64)> = lines[1..]
        .iter()
        .map(|l| (l["task_id"].as_str().unwrap().to_string(), l["gen_index"].as_u64().unwrap()))
        .collect();
    let expected = [("t1", 0), ("t2", 0), ("t3", 1), ("t4", 1)];
    assert_eq!(keys, expected.map(|(t, g)| (t.to_string(), g)));

    // rerun is byte-identical
    let again = dir.path().join("again.jsonl");
    ok(&kernelcur(&[
        "curate",
        "--records",
        p(&records),
        "--evals",
        p(&evals),
        "--out",
        p(&again),
    ]));
    assert_eq!(fs::read(&curated).unwrap(), fs::read(&again).unwrap());

    // and feeds export-sft
    let sft = dir.path().join("sft.jsonl");
    ok(&kernelcur(&[
        "export-sft",
        "--curated",
        p(&curated),
        "--records",
        p(&records),
        "--out",
        p(&sft),
    ]));
    let examples: Vec<Value> = fs::read_to_string(&sft)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(examples.len(), 4);
    let response = examples[0]["response"].as_str().unwrap();
    assert!(response.starts_with("<think>\nstep"), "{response}");
    assert!(response.ends_with("pass  # t1/0\n"), "{response}");
    assert!(examples[0]["prompt"].as_str().unwrap().contains("# t1\n"));
    assert_eq!(examples[0]["loss_on"], "response");
}

#[test]
fn curate_rejects_bad_threshold_with_exit_2() {
    let dir = TempDir::new().unwrap();
    let (records, evals) = five_task_evals(dir.path());
    let out = kernelcur(&[
        "curate",
        "--records",
        p(&records),
        "--evals",
        p(&evals),
        "--out",
        p(&dir.path().join("c.jsonl")),
        "--speedup-threshold",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("c.jsonl").exists());
}

#[test]
fn random_policy_is_seeded() {
    let dir = TempDir::new().unwrap();
    let (records, evals) = five_task_evals(dir.path());
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&kernelcur(&[
            "curate",
            "--records",
            p(&records),
            "--evals",
            p(&evals),
            "--out",
            p(&out),
            "--policy",
            "random",
            "--target-size",
            "2",
            "--seed",
            seed,
        ]));
        fs::read_to_string(out).unwrap()
    };
    let a = run("7", "a.jsonl");
    assert_eq!(a, run("7", "b.jsonl"));
    assert_eq!(a.lines().count(), 3);
    assert!(a.lines().skip(1).all(|l| !l.contains("\"part\"")));
}

#[test]
fn analyze_writes_report_object() {
    let dir = TempDir::new().unwrap();
    let (records, evals) = five_task_evals(dir.path());
    let out = dir.path().join("analysis.json");
    ok(&kernelcur(&[
        "analyze",
        "--records",
        p(&records),
        "--evals",
        p(&evals),
        "--out",
        p(&out),
        "--bin-width",
        "500",
    ]));
    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["config"]["bin_width"], 500);
    assert_eq!(report["quantile_method"], "type7");
    assert_eq!(report["n_evaluated"], 11);
    assert_eq!(report["n_correct"], 7);
    assert_eq!(report["correlation"]["mode"], "correct_only");
    assert_eq!(report["correlation"]["stat"]["n"], 7);
}

fn write_uniform_task(path: &Path, tokens: &[u64]) {
    let mut text = String::new();
    for (i, &t) in tokens.iter().enumerate() {
        let trace = if t == 0 { "" } else { "x" };
        text.push_str(&format!(
            "{{\"version\":1,\"task_id\":\"band\",\"gen_index\":{i},\"task_source\":\"s\",\"kernel_source\":\"k{i}\",\"reasoning_trace\":\"{trace}\",\"reasoning_tokens\":{t}}}\n"
        ));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn difficulty_defaults_place_7035_9_in_medium() {
    let dir = TempDir::new().unwrap();
    let records = dir.path().join("r.jsonl");
    // ten generations averaging 7035.9 tokens
    let mut tokens = vec![7035u64; 10];
    tokens[0] += 9;
    write_uniform_task(&records, &tokens);
    let out = dir.path().join("d.jsonl");
    ok(&kernelcur(&["difficulty", "--records", p(&records), "--out", p(&out)]));
    let lines: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!((lines[0]["task_arl"].as_f64().unwrap() - 7035.9).abs() < 1e-9);
    assert_eq!(lines[0]["tier"], "medium");
    assert_eq!(lines[0]["low_confidence"], false);
    assert_eq!(lines[1]["type"], "summary");
    assert_eq!(lines[1]["config"]["easy_max"], 4000.0);
    assert_eq!(lines[1]["config"]["hard_min"], 8500.0);
}

#[test]
fn difficulty_with_evals_reports_tiers() {
    let dir = TempDir::new().unwrap();
    let (records, evals) = five_task_evals(dir.path());
    let out = dir.path().join("d.jsonl");
    ok(&kernelcur(&[
        "difficulty",
        "--records",
        p(&records),
        "--evals",
        p(&evals),
        "--out",
        p(&out),
        "--easy-max",
        "700",
        "--hard-min",
        "2000",
    ]));
    let text = fs::read_to_string(&out).unwrap();
    let summary: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(summary["k"], 1);
    assert_eq!(summary["n_low_confidence"], 5);
    let easy = &summary["tiers"][0];
    assert_eq!(easy["tier"], "easy");
    // t4 (ARL 350) and t5 (ARL 150) are easy; neither is correct on its first generation
    assert_eq!(easy["n"], 2);
    assert_eq!(easy["exec_rate"], 0.0);
}

#[test]
fn report_prints_seventeen_percent_fast_1() {
    let dir = TempDir::new().unwrap();
    let records = dir.path().join("r.jsonl");
    let verdicts = dir.path().join("v.jsonl");
    let mut r = String::new();
    let mut v = String::new();
    for i in 0..100 {
        r.push_str(&format!(
            "{{\"version\":1,\"task_id\":\"t{i:03}\",\"gen_index\":0,\"task_source\":\"s{i}\",\"kernel_source\":\"k{i}\",\"reasoning_trace\":\"x\",\"reasoning_tokens\":10}}\n"
        ));
        let line = if i < 17 {
            format!("{{\"task_id\":\"t{i:03}\",\"gen_index\":0,\"status\":\"correct\",\"t_ref_ms\":1.5,\"t_kernel_ms\":1.0}}\n")
        } else if i < 60 {
            format!("{{\"task_id\":\"t{i:03}\",\"gen_index\":0,\"status\":\"correct\",\"t_ref_ms\":0.8,\"t_kernel_ms\":1.0}}\n")
        } else {
            format!("{{\"task_id\":\"t{i:03}\",\"gen_index\":0,\"status\":\"incorrect\"}}\n")
        };
        v.push_str(&line);
    }
    fs::write(&records, r).unwrap();
    fs::write(&verdicts, v).unwrap();
    let evals = dir.path().join("e.jsonl");
    ok(&kernelcur(&[
        "evaluate",
        "--records",
        p(&records),
        "--runner",
        &format!("mock:scripted:{}", p(&verdicts)),
        "--out",
        p(&evals),
        "--summary",
        p(&dir.path().join("s.json")),
    ]));
    let out = kernelcur(&["report", "--records", p(&records), "--evals", p(&evals)]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# p_thresholds=[1] k=10"), "{text}");
    let fast = text.lines().find(|l| l.starts_with("fast_1 ")).unwrap();
    assert!(fast.trim_end().ends_with("17.0%"), "{fast}");
    let exec = text.lines().find(|l| l.starts_with("Exec ")).unwrap();
    assert!(exec.trim_end().ends_with("60.0%"), "{exec}");

    let json = kernelcur(&[
        "report",
        "--records",
        p(&records),
        "--evals",
        p(&evals),
        "--format",
        "json",
        "--p",
        "0.5",
        "--p",
        "1",
    ]);
    ok(&json);
    let v: Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["columns"][0]["fast_p"][0]["value"], 0.6);
    assert_eq!(v["columns"][0]["fast_p"][1]["value"], 0.17);
}

#[test]
fn help_documents_every_flag_default() {
    let expectations: &[(&str, &[&str])] = &[
        (
            "evaluate",
            &[
                "[default: 1]",
                "[default: 3]",
                "[default: 10]",
                "[default: median]",
                "[default: 5]",
                "[default: 0.01]",
                "[default: 300]",
                "[default: gpu]",
                "[default: 2]",
                "KERNELCUR_CACHE_DIR",
            ],
        ),
        (
            "curate",
            &["[default: concur]", "[default: 5]", "[default: 0]", "[default: 4892]"],
        ),
        ("analyze", &["[default: 1000]", "[default: off]"]),
        (
            "difficulty",
            &["[default: 4000]", "[default: 8500]", "[default: 10]", "[default: 1]"],
        ),
        ("export-sft", &["[default: <think>\\n]", "[default: built-in template]"]),
        ("report", &["[default: 1]", "[default: 10]", "[default: text]"]),
    ];
    for (cmd, needles) in expectations {
        let out = kernelcur(&[cmd, "--help"]);
        ok(&out);
        let help = String::from_utf8(out.stdout).unwrap();
        for n in *needles {
            assert!(help.contains(n), "{cmd} --help lacks {n}:\n{help}");
        }
        // every option other than the inputs/outputs names a default; long
        // help text may continue on the following lines
        let mut entries: Vec<Option<String>> = Vec::new();
        for line in help.lines() {
            let t = line.trim_start();
            if t.starts_with("--") {
                entries.push(Some(t.to_string()));
            } else if t.starts_with('-') || t.is_empty() || !line.starts_with(' ') {
                entries.push(None);
            } else if let Some(Some(last)) = entries.last_mut() {
                last.push(' ');
                last.push_str(t);
            }
        }
        for e in entries.iter().flatten() {
            let is_path = ["--records", "--evals", "--out", "--curated", "--runner", "--summary"]
                .iter()
                .any(|f| e.starts_with(&format!("{f} ")));
            assert!(is_path || e.contains("[default:"), "{cmd}: undocumented default in {e:?}");
        }
    }
}
