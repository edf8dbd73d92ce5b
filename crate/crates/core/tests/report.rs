#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use phaseprobe::corpus::Corpus;
use phaseprobe::experiment::{
    aggregate, compare, run_experiment, store, Comparison, Metric, RunOptions, ScoreEntry,
    ScoreMatrix, DEFAULT_PAIRS,
};
use phaseprobe::report::{
    emit_beeswarm, emit_summary, parse_summary_csv, render_summary_csv, FigureSpec, ReportError,
};
use phaseprobe::stats::{self, WelchOptions};

fn pairs() -> Vec<(String, String)> {
    DEFAULT_PAIRS
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

/// Both published arms in one matrix, built straight from the table.
fn table_matrix() -> ScoreMatrix {
    let mut m = ScoreMatrix::default();
    for (ci, cond) in CONDITIONS.iter().enumerate() {
        for r in 0..3 {
            for e in 0..5 {
                let (tone, tsun) = GPT4O[ci][r][e];
                for (metric, v) in [(Metric::TonePhase, tone), (Metric::Tsundere, tsun)] {
                    let entry = ScoreEntry {
                        response_index: r as u32 + 1,
                        eval_index: e as u32 + 1,
                        record_id: format!("gpt4o-{cond}-{r}-{e}"),
                        value: v,
                    };
                    m.insert("gpt4o", cond, metric, entry);
                }
            }
        }
    }
    for (ci, cond) in CONDITIONS.iter().enumerate() {
        for e in 0..5 {
            let (tone, tsun) = GEMINI[ci][e];
            for (metric, v) in [(Metric::TonePhase, tone), (Metric::Tsundere, tsun)] {
                let entry = ScoreEntry {
                    response_index: 1,
                    eval_index: e as u32 + 1,
                    record_id: format!("gemini-{cond}-{e}"),
                    value: v,
                };
                m.insert("gemini", cond, metric, entry);
            }
        }
    }
    m
}

fn comparisons(m: &ScoreMatrix) -> Vec<Comparison> {
    Metric::ALL
        .iter()
        .flat_map(|&metric| compare(m, &pairs(), metric, None, WelchOptions::default()).unwrap())
        .collect()
}

#[test]
fn svg_is_well_formed_with_one_dot_per_score() {
    let m = table_matrix();
    let dir = tempfile::tempdir().unwrap();
    let svg = emit_beeswarm(&m, &comparisons(&m), &dir.path().join("fig.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed XML");
    let class = |n: &roxmltree::Node, c: &str| n.attribute("class") == Some(c);

    let panels: Vec<_> = doc.descendants().filter(|n| class(n, "panel")).collect();
    assert_eq!(panels.len(), 2);
    assert_eq!(panels[0].attribute("data-metric"), Some("tone_phase"));
    for panel in &panels {
        let groups: Vec<_> = panel.descendants().filter(|n| class(n, "group")).collect();
        assert_eq!(groups.len(), 6);
        for g in groups {
            let dots = g.descendants().filter(|n| class(n, "dot")).count();
            let expected = if g.attribute("data-evaluator") == Some("gpt4o") {
                15
            } else {
                5
            };
            assert_eq!(dots, expected);
            assert_eq!(g.attribute("data-n"), Some(expected.to_string().as_str()));
            for mark in ["median", "mean", "whisker"] {
                assert_eq!(
                    g.descendants().filter(|n| class(n, mark)).count(),
                    1,
                    "{mark}"
                );
            }
        }
    }
    let total = doc.descendants().filter(|n| class(n, "dot")).count();
    assert_eq!(total, m.score_count());
}

#[test]
fn significance_marks_follow_the_p_values() {
    let m = table_matrix();
    let dir = tempfile::tempdir().unwrap();
    let svg = emit_beeswarm(&m, &comparisons(&m), &dir.path().join("fig.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let labels: Vec<Vec<&str>> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("panel"))
        .map(|p| {
            p.descendants()
                .filter(|n| n.attribute("class") == Some("sig"))
                .map(|n| n.text().unwrap())
                .collect()
        })
        .collect();
    // per panel: gemini pairs then gpt4o pairs (evaluators in insertion order)
    assert_eq!(labels[0], ["**", "n.s.", "*", "*", "N/A", "*"]);
    assert_eq!(labels[1], ["**", "n.s.", "**", "*", "n.s.", "*"]);
}

#[test]
fn mean_and_median_marks_match_describe() {
    let m = table_matrix();
    let spec = FigureSpec::from_matrix(&m, &[]).unwrap();
    let svg = phaseprobe::report::render_svg(&m, &spec);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let means: Vec<f64> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("mean"))
        .map(|n| n.attribute("data-mean").unwrap().parse().unwrap())
        .collect();
    assert_eq!(means.len(), 12);
    let expected = stats::mean(&gpt4o_column(0, false));
    assert!(
        means.contains(&expected),
        "full-precision mean is printed exactly"
    );
}

#[test]
fn figure_bytes_are_stable_across_store_order() {
    let dir = tempfile::tempdir().unwrap();
    let man = manifest("manifest_gpt4o.json", dir.path());
    run_experiment(
        &man,
        &Corpus::builtin(),
        &replay_providers(&man).0,
        &RunOptions::default(),
    )
    .unwrap();
    let mut entries = store::read_entries(dir.path()).unwrap();
    let a = aggregate(&entries, &man);
    entries.reverse();
    let b = aggregate(&entries, &man);
    let out = tempfile::tempdir().unwrap();
    let svg_a = emit_beeswarm(&a, &comparisons(&a), &out.path().join("a.svg")).unwrap();
    let svg_b = emit_beeswarm(&b, &comparisons(&b), &out.path().join("b.svg")).unwrap();
    assert_eq!(svg_a, svg_b);
}

#[test]
fn summary_mirrors_the_table() {
    let m = table_matrix();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("summary.csv");
    let docs = emit_summary(&m, &comparisons(&m), &csv_path, None).unwrap();
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), docs.csv);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("summary.md")).unwrap(),
        docs.markdown
    );

    let rows = |kind: &str| {
        docs.csv
            .lines()
            .filter(|l| l.starts_with(&format!("{kind},")))
            .count()
    };
    assert_eq!(rows("score"), 45 + 15);
    assert_eq!(rows("ave"), 6);
    assert_eq!(rows("p"), 6);
    assert!(docs.csv.contains("p,gemini,TIPe/TIPn-e,,,N/A,"));

    let table = parse_summary_csv(&docs.csv).unwrap();
    let (_, tsun, n) = table.averages[&("gpt4o".to_string(), "TIPe".to_string())];
    assert_eq!(n, 15);
    assert!((tsun.unwrap() - 7.406666666666667).abs() < 1e-12);
    assert!(docs.markdown.contains("| TIPe | 15 | 6.09 | 7.41 | 0 |"));
    assert!(docs.markdown.contains("p = 0.00205604 (**)"));

    // re-parsed scores aggregate to the same means
    for (key, cell) in &m.cells {
        let back = table
            .matrix
            .cell(&key.evaluator, &key.condition, key.metric)
            .unwrap();
        let (a, b) = (stats::mean(&cell.values()), stats::mean(&back.values()));
        assert!((a - b).abs() < 1e-9);
        assert_eq!(back.scores, cell.scores);
    }
    let (tone_p, tsun_p) = table.p_values[&("gpt4o".into(), "TIPc".into(), "TIPe".into())];
    assert!((tone_p.unwrap() - 0.0055829).abs() < 1e-4);
    assert!((tsun_p.unwrap() - 0.00205604).abs() < 1e-4);
}

#[test]
fn empty_matrix_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = ScoreMatrix::with_layout(&["x".into()], &["TIPc".into()]);
    assert!(matches!(
        emit_beeswarm(&m, &[], &dir.path().join("f.svg")),
        Err(ReportError::EmptyMatrix)
    ));
    assert!(matches!(
        emit_summary(&m, &[], &dir.path().join("s.csv"), None),
        Err(ReportError::EmptyMatrix)
    ));
    assert!(matches!(
        render_summary_csv(&m, &[]),
        Err(ReportError::EmptyMatrix)
    ));
}

#[test]
fn comparison_outside_the_figure_is_rejected() {
    let m = table_matrix();
    let mut c = comparisons(&m);
    c[0].evaluator_id = "claude".into();
    assert!(matches!(
        FigureSpec::from_matrix(&m, &c),
        Err(ReportError::UnknownGroup { .. })
    ));
}
