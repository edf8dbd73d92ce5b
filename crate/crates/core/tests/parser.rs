#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use phaseprobe::tqp::{parse_evaluation, ToneBand, WarningCode};
use proptest::prelude::*;
use std::fs;

fn appendix(name: &str) -> String {
    fs::read_to_string(fixtures_dir().join("appendix").join(name)).unwrap()
}

const APPENDIX: [(&str, f64, f64); 3] = [
    ("tqp1_gpt4o_TIPc1_log5.txt", 6.0, 7.3),
    ("tqp1_gpt4o_TIPe1_log2.txt", 6.0, 7.5),
    ("tqp1_gpt4o_TIPn-e1_log2.txt", 6.0, 7.8),
];

#[test]
fn appendix_logs_parse_exactly() {
    for (name, tone, tsun) in APPENDIX {
        let (eval, diags) = parse_evaluation(&appendix(name)).unwrap();
        assert_eq!(
            (eval.tone_phase_score, eval.tsundere_score),
            (tone, tsun),
            "{name}"
        );
        assert_eq!(eval.tone_band, ToneBand::Balanced, "{name}");
        assert!(!diags.has(WarningCode::MidpointImputed), "{name}");
        assert!(
            !diags.has(WarningCode::SectionMissing),
            "{name}: {:?}",
            diags.warnings
        );
        assert!(eval.emotive_markers.len() >= 3, "{name}");
        assert!(
            !eval.quotes.is_empty() && !eval.interpretation.is_empty(),
            "{name}"
        );
        assert_eq!(
            eval.curve_summary.as_ref().and_then(|c| c.score),
            Some(tsun),
            "{name}"
        );
    }
}

#[test]
fn appendix_logs_sit_in_their_table_slots() {
    // (condition index, response, eval) of each appendix log
    let slots = [(0, 0, 4), (1, 0, 1), (2, 0, 1)];
    for ((_, tone, tsun), (c, r, e)) in APPENDIX.iter().zip(slots) {
        assert_eq!(GPT4O[c][r][e], (*tone, *tsun));
    }
}

#[test]
fn every_replay_judge_fixture_matches_the_table() {
    for (ci, cond) in CONDITIONS.iter().enumerate() {
        for r in 0..3 {
            for e in 0..5 {
                let path = fixtures_dir().join(format!(
                    "replay/gpt4o/TQP1_{cond}_r{}/{}.txt",
                    r + 1,
                    e + 1
                ));
                let (eval, _) = parse_evaluation(&fs::read_to_string(&path).unwrap()).unwrap();
                assert_eq!(
                    (eval.tone_phase_score, eval.tsundere_score),
                    GPT4O[ci][r][e],
                    "{}",
                    path.display()
                );
            }
        }
        for e in 0..5 {
            let path = fixtures_dir().join(format!("replay/gemini/TQP1_{cond}_r1/{}.txt", e + 1));
            let (eval, _) = parse_evaluation(&fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(
                (eval.tone_phase_score, eval.tsundere_score),
                GEMINI[ci][e],
                "{}",
                path.display()
            );
        }
    }
}

/// Splits a log into its preamble and one block per top-level section.
fn blocks(text: &str) -> (String, Vec<String>) {
    let mut preamble = String::new();
    let mut out: Vec<String> = Vec::new();
    for line in text.split_inclusive('\n') {
        let head = line.trim_start_matches(['#', '*', ' ']);
        let starts = head.chars().next().is_some_and(|c| c.is_ascii_digit())
            && head.get(1..3) == Some(". ")
            || head.starts_with("Tsun-Dere Curve Model");
        if starts {
            out.push(String::new());
        }
        match out.last_mut() {
            Some(b) => b.push_str(line),
            None => preamble.push_str(line),
        }
    }
    for b in &mut out {
        if !b.ends_with("\n\n") {
            b.push('\n');
        }
    }
    (preamble, out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn section_order_does_not_change_scores(which in 0usize..3, perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle()) {
        let (name, tone, tsun) = APPENDIX[which];
        let text = appendix(name);
        let (preamble, parts) = blocks(&text);
        prop_assert_eq!(parts.len(), 7);
        let (original, _) = parse_evaluation(&text).unwrap();
        let shuffled: String = std::iter::once(preamble).chain(perm.iter().map(|&i| parts[i].clone())).collect();
        let (eval, _) = parse_evaluation(&shuffled).unwrap();
        prop_assert_eq!((eval.tone_phase_score, eval.tsundere_score), (tone, tsun));
        prop_assert_eq!(eval.tone_band, original.tone_band);
        prop_assert_eq!(&eval.emotive_markers, &original.emotive_markers);
        prop_assert_eq!(&eval.quotes, &original.quotes);
        prop_assert_eq!(&eval.curve_summary, &original.curve_summary);
    }

    #[test]
    fn arbitrary_text_never_panics(s in "\\PC{0,400}") {
        let _ = parse_evaluation(&s);
    }

    #[test]
    fn scores_stay_in_range(tone in 0u32..=100, tsun in 0u32..=100) {
        let (tone, tsun) = (f64::from(tone) / 10.0, f64::from(tsun) / 10.0);
        let text = format!("1. Tone Phase Classification: (score: {tone})\n\n2. Tsun-Dere Score: {tsun}\n");
        let (eval, _) = parse_evaluation(&text).unwrap();
        prop_assert_eq!(eval.tsundere_score, tsun);
        prop_assert_eq!(eval.tone_phase_score, tone);
        prop_assert_eq!(eval.tone_band, ToneBand::for_score(tone));
    }
}
