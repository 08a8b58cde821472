mod common;

use std::collections::BTreeMap;

use kernelcur::harness::{cache_key, evaluate, mock_runner, MockMode, ResultCache, RunConfig, Runner};
use kernelcur::records::{group_by_task, to_jsonl};
use kernelcur::Status;

use common::batch;

#[test]
fn worker_count_does_not_change_output() {
    let records = batch(500);
    let cfg = RunConfig::default();
    let outputs: Vec<String> = [1, 4, 16]
        .iter()
        .map(|&w| {
            let runner = mock_runner(MockMode::Hashed);
            let out = evaluate(&records, &runner, &cfg, w, &mut ResultCache::in_memory()).unwrap();
            assert_eq!(runner.invocations(), 500);
            to_jsonl(&out.results)
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn persistent_cache_serves_a_rerun_without_the_runner() {
    let dir = tempfile::tempdir().unwrap();
    let records = batch(60);
    let cfg = RunConfig::default();
    let first = {
        let mut cache = ResultCache::open(dir.path()).unwrap();
        evaluate(&records, &mock_runner(MockMode::Hashed), &cfg, 4, &mut cache).unwrap()
    };
    let mut cache = ResultCache::open(dir.path()).unwrap();
    let runner = mock_runner(MockMode::Hashed);
    let second = evaluate(&records, &runner, &cfg, 4, &mut cache).unwrap();
    assert_eq!(second.stats.cache_hits, 60);
    assert_eq!(runner.invocations(), 0);
    assert_eq!(to_jsonl(&first.results), to_jsonl(&second.results));

    let index = std::fs::read_to_string(dir.path().join("index.jsonl")).unwrap();
    assert_eq!(index.lines().count(), 60);
}

#[test]
fn corrupt_entry_is_dropped_and_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let records = batch(10);
    let cfg = RunConfig::default();
    let first = evaluate(
        &records,
        &mock_runner(MockMode::Hashed),
        &cfg,
        1,
        &mut ResultCache::open(dir.path()).unwrap(),
    )
    .unwrap();

    let key = cache_key(&records[3].task_source, &records[3].kernel_source, &cfg.config_hash());
    let entry = dir.path().join("entries").join(&key[..2]).join(format!("{key}.json"));
    let text = std::fs::read_to_string(&entry).unwrap();
    std::fs::write(&entry, text.replace("\"status\"", "\"statuz\"")).unwrap();

    let mut cache = ResultCache::open(dir.path()).unwrap();
    let runner = mock_runner(MockMode::Hashed);
    let second = evaluate(&records, &runner, &cfg, 1, &mut cache).unwrap();
    assert_eq!(cache.corrupt_dropped(), 1);
    assert_eq!(second.stats.cache_hits, 9);
    assert_eq!(runner.invocations(), 1);
    assert_eq!(first.results, second.results);
}

#[test]
fn hashed_verdicts_are_balanced_and_gated() {
    let records = batch(10_000);
    let out = evaluate(
        &records,
        &mock_runner(MockMode::Hashed),
        &RunConfig::default(),
        8,
        &mut ResultCache::in_memory(),
    )
    .unwrap();
    let mut counts: BTreeMap<Status, usize> = BTreeMap::new();
    for e in &out.results {
        *counts.entry(e.status).or_default() += 1;
        assert_eq!(e.speedup > 0.0, e.status == Status::Correct, "{e:?}");
        assert_eq!(e.t_ref_ms.is_some(), e.status == Status::Correct);
    }
    assert_eq!(counts.len(), 4);
    for (status, n) in counts {
        // each of the four verdicts takes a quarter, within about 4.6 sigma
        assert!((2300..=2700).contains(&n), "{status}: {n}");
    }
    let grouping = group_by_task(&records, &out.results).unwrap();
    assert!(grouping.unevaluated.is_empty());
    assert_eq!(grouping.groups.len(), 2000);
}

#[test]
fn disk_cache_round_trips_timings_exactly() {
    use kernelcur::harness::Outcome;
    let dir = tempfile::tempdir().unwrap();
    let mut cache = ResultCache::open(dir.path()).unwrap();
    let timings: Vec<f64> = (0..2000).map(|i| 0.05 + f64::from(i * 37 % 65536) / 1000.0 + 1e-17 * f64::from(i)).collect();
    for (i, &t) in timings.iter().enumerate() {
        let o = Outcome {
            status: Status::Correct,
            t_ref_ms: Some(t),
            t_kernel_ms: Some(1.0 / (t + 0.1)),
            diagnostics: String::new(),
        };
        cache.put(&format!("{i:064x}"), &o).unwrap();
    }
    let mut reopened = ResultCache::open(dir.path()).unwrap();
    for (i, &t) in timings.iter().enumerate() {
        let o = reopened.get(&format!("{i:064x}")).expect("entry survives");
        assert_eq!(o.t_ref_ms.unwrap().to_bits(), t.to_bits());
        assert_eq!(o.t_kernel_ms.unwrap().to_bits(), (1.0 / (t + 0.1)).to_bits());
    }
    assert_eq!(reopened.corrupt_dropped(), 0);
}
