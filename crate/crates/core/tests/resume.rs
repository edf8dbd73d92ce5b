mod common;

use common::*;
use phaseprobe::corpus::Corpus;
use phaseprobe::experiment::{
    aggregate, run_experiment, store, RunOptions, ScoreMatrix, StoreEntry,
};

fn kind_counts(entries: &[StoreEntry]) -> [usize; 3] {
    let n = |k: &str| entries.iter().filter(|e| e.kind() == k).count();
    [
        n("subject_session"),
        n("evaluator_session"),
        n("parsed_eval"),
    ]
}

fn values(m: &ScoreMatrix) -> Vec<(String, Vec<f64>)> {
    m.cells
        .iter()
        .map(|(k, c)| {
            (
                format!("{}/{}/{}", k.evaluator, k.condition, k.metric),
                c.values(),
            )
        })
        .collect()
}

fn interrupted_then_resumed(
    name: &str,
    limit: usize,
    jobs: usize,
) -> (Vec<StoreEntry>, ScoreMatrix, usize) {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(name, dir.path());
    let corpus = Corpus::builtin();
    let first = RunOptions {
        jobs,
        record_limit: Some(limit),
        ..RunOptions::default()
    };
    let s1 = run_experiment(&m, &corpus, &replay_providers(&m).0, &first).unwrap();
    assert_eq!(s1.records_appended, limit.min(s1.records_appended));
    let after_kill = store::read_entries(dir.path()).unwrap().len();
    let s2 = run_experiment(
        &m,
        &corpus,
        &replay_providers(&m).0,
        &RunOptions {
            jobs,
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert!(!s2.interrupted);
    let entries = store::read_entries(dir.path()).unwrap();
    assert_eq!(entries.len(), after_kill + s2.records_appended);
    let matrix = aggregate(&entries, &m);
    (
        entries,
        matrix,
        s2.evaluator_sessions_run + s2.subject_sessions_run,
    )
}

#[test]
fn interrupting_at_every_record_resumes_to_the_same_store() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("manifest_gpt4o.json", dir.path());
    run_experiment(
        &m,
        &Corpus::builtin(),
        &replay_providers(&m).0,
        &RunOptions::default(),
    )
    .unwrap();
    let full = store::read_entries(dir.path()).unwrap();
    let reference = aggregate(&full, &m);
    assert_eq!(kind_counts(&full), [9, 45, 45]);

    for limit in 0..=full.len() {
        let (entries, matrix, rerun) = interrupted_then_resumed("manifest_gpt4o.json", limit, 1);
        assert_eq!(kind_counts(&entries), [9, 45, 45], "limit {limit}");
        assert_eq!(values(&matrix), values(&reference), "limit {limit}");
        // sessions already stored are never executed again
        let stored_sessions = full[..limit]
            .iter()
            .filter(|e| e.session().is_some())
            .count();
        assert_eq!(rerun, 54 - stored_sessions, "limit {limit}");
    }
}

#[test]
fn parallel_interruptions_also_converge() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("manifest_gemini.json", dir.path());
    run_experiment(
        &m,
        &Corpus::builtin(),
        &replay_providers(&m).0,
        &RunOptions::default(),
    )
    .unwrap();
    let reference = aggregate(&store::read_entries(dir.path()).unwrap(), &m);
    for limit in [0, 1, 2, 3, 4, 7, 12, 20, 32, 33] {
        let (entries, matrix, _) = interrupted_then_resumed("manifest_gemini.json", limit, 4);
        assert_eq!(kind_counts(&entries), [3, 15, 15], "limit {limit}");
        assert_eq!(values(&matrix), values(&reference), "limit {limit}");
    }
}

#[test]
fn resuming_a_finished_run_does_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("manifest_gemini.json", dir.path());
    let corpus = Corpus::builtin();
    run_experiment(&m, &corpus, &replay_providers(&m).0, &RunOptions::default()).unwrap();
    let before = std::fs::read(dir.path().join(store::STORE_FILE)).unwrap();
    let s = run_experiment(&m, &corpus, &replay_providers(&m).0, &RunOptions::default()).unwrap();
    assert_eq!(s.records_appended, 0);
    assert_eq!(s.slots_skipped, 3 + 15);
    assert_eq!(
        std::fs::read(dir.path().join(store::STORE_FILE)).unwrap(),
        before
    );
}

#[test]
fn torn_final_line_is_discarded_on_resume() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("manifest_gemini.json", dir.path());
    let corpus = Corpus::builtin();
    let opts = RunOptions {
        record_limit: Some(10),
        ..RunOptions::default()
    };
    run_experiment(&m, &corpus, &replay_providers(&m).0, &opts).unwrap();
    let path = dir.path().join(store::STORE_FILE);
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap();
    f.write_all(br#"{"kind":"evaluator_session","evaluator_id":"gem"#)
        .unwrap();
    drop(f);
    run_experiment(&m, &corpus, &replay_providers(&m).0, &RunOptions::default()).unwrap();
    let entries = store::read_entries(dir.path()).unwrap();
    assert_eq!(kind_counts(&entries), [3, 15, 15]);
    assert!(std::fs::read_to_string(&path).unwrap().ends_with("}\n"));
}
