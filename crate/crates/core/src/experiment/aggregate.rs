use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::ExperimentManifest;
use super::store::{read_entries, read_manifest, StoreEntry, StoreError};
use crate::providers::{Outcome, SessionRecord};
use crate::stats::{self, StatsError, WelchOptions, WelchResult};
use crate::tqp::TqpEvaluation;

/// Condition pairs compared in the original analysis.
pub const DEFAULT_PAIRS: [(&str, &str); 3] =
    [("TIPc", "TIPe"), ("TIPe", "TIPn-e"), ("TIPc", "TIPn-e")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TonePhase,
    Tsundere,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::TonePhase, Metric::Tsundere];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::TonePhase => "tone_phase",
            Metric::Tsundere => "tsundere",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::TonePhase => "Tone Phase",
            Metric::Tsundere => "Tsun-Dere",
        }
    }

    pub fn of(self, eval: &TqpEvaluation) -> f64 {
        match self {
            Metric::TonePhase => eval.tone_phase_score,
            Metric::Tsundere => eval.tsundere_score,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "tone_phase" | "tone" => Ok(Metric::TonePhase),
            "tsundere" | "tsun_dere" => Ok(Metric::Tsundere),
            _ => Err(format!(
                "unknown metric {s:?} (expected tone_phase or tsundere)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub evaluator: String,
    pub condition: String,
    pub metric: Metric,
}

impl CellKey {
    pub fn new(evaluator: &str, condition: &str, metric: Metric) -> Self {
        CellKey {
            evaluator: evaluator.to_string(),
            condition: condition.to_string(),
            metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub response_index: u32,
    pub eval_index: u32,
    /// Evaluator session the score came from.
    pub record_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusions {
    pub refusals: usize,
    pub parse_failures: usize,
    pub transport_errors: usize,
}

impl Exclusions {
    pub fn total(&self) -> usize {
        self.refusals + self.parse_failures + self.transport_errors
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    /// Ordered by (response index, eval index).
    pub scores: Vec<ScoreEntry>,
    pub exclusions: Exclusions,
}

impl ScoreCell {
    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.value).collect()
    }

    pub fn attempted(&self) -> usize {
        self.scores.len() + self.exclusions.total()
    }
}

/// Score vectors per (evaluator, condition, metric).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreMatrix {
    pub evaluators: Vec<String>,
    pub conditions: Vec<String>,
    pub cells: BTreeMap<CellKey, ScoreCell>,
}

impl ScoreMatrix {
    /// An empty matrix with a cell for every evaluator × condition × metric.
    pub fn with_layout(evaluators: &[String], conditions: &[String]) -> Self {
        let mut cells = BTreeMap::new();
        for e in evaluators {
            for c in conditions {
                for m in Metric::ALL {
                    cells.insert(CellKey::new(e, c, m), ScoreCell::default());
                }
            }
        }
        ScoreMatrix {
            evaluators: evaluators.to_vec(),
            conditions: conditions.to_vec(),
            cells,
        }
    }

    pub fn cell(&self, evaluator: &str, condition: &str, metric: Metric) -> Option<&ScoreCell> {
        self.cells.get(&CellKey::new(evaluator, condition, metric))
    }

    pub fn values(&self, evaluator: &str, condition: &str, metric: Metric) -> Option<Vec<f64>> {
        self.cell(evaluator, condition, metric)
            .map(ScoreCell::values)
    }

    pub fn score_count(&self) -> usize {
        self.cells.values().map(|c| c.scores.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.score_count() == 0
    }

    /// Adds a score, registering unseen evaluators and conditions and keeping
    /// the cell in canonical order.
    pub fn insert(&mut self, evaluator: &str, condition: &str, metric: Metric, entry: ScoreEntry) {
        if !self.evaluators.iter().any(|e| e == evaluator) {
            self.evaluators.push(evaluator.to_string());
        }
        if !self.conditions.iter().any(|c| c == condition) {
            self.conditions.push(condition.to_string());
        }
        let cell = self
            .cells
            .entry(CellKey::new(evaluator, condition, metric))
            .or_default();
        let at = cell.scores.partition_point(|s| {
            (s.response_index, s.eval_index) <= (entry.response_index, entry.eval_index)
        });
        cell.scores.insert(at, entry);
    }
}

fn session_order(s: &SessionRecord) -> (chrono::DateTime<chrono::Utc>, &str) {
    (s.finished_at, s.record_id.as_str())
}

/// Groups usable evaluations into score vectors.
///
/// Each evaluator slot contributes at most one score: from its usable
/// session if it has one, otherwise it counts once under exclusions,
/// classified by its latest session. The result does not depend on the order
/// of `entries`.
pub fn aggregate(entries: &[StoreEntry], manifest: &ExperimentManifest) -> ScoreMatrix {
    let evaluators: Vec<String> = manifest
        .evaluators
        .iter()
        .map(|e| e.provider_id.clone())
        .collect();
    let mut matrix = ScoreMatrix::with_layout(&evaluators, &manifest.conditions);

    let mut parsed: BTreeMap<&str, Option<&TqpEvaluation>> = BTreeMap::new();
    let mut slots: BTreeMap<(&str, &str, u32, u32), Vec<&SessionRecord>> = BTreeMap::new();
    for entry in entries {
        match entry {
            StoreEntry::EvaluatorSession {
                evaluator_id,
                condition,
                response_index,
                eval_index,
                session,
                ..
            } => slots
                .entry((evaluator_id, condition, *response_index, *eval_index))
                .or_default()
                .push(session),
            StoreEntry::ParsedEval {
                record_id,
                evaluation,
                ..
            } => {
                parsed.insert(record_id, evaluation.as_ref());
            }
            StoreEntry::SubjectSession { .. } => {}
        }
    }

    for ((evaluator, condition, r, e), sessions) in slots {
        if !matrix
            .cell(evaluator, condition, Metric::TonePhase)
            .is_some()
        {
            continue;
        }
        let usable = sessions
            .iter()
            .filter(|s| s.outcome == Outcome::Ok)
            .filter_map(|s| {
                parsed
                    .get(s.record_id.as_str())
                    .copied()
                    .flatten()
                    .map(|ev| (*s, ev))
            })
            .max_by(|a, b| session_order(a.0).cmp(&session_order(b.0)));
        match usable {
            Some((session, eval)) => {
                for metric in Metric::ALL {
                    matrix.insert(
                        evaluator,
                        condition,
                        metric,
                        ScoreEntry {
                            response_index: r,
                            eval_index: e,
                            record_id: session.record_id.clone(),
                            value: metric.of(eval),
                        },
                    );
                }
            }
            None => {
                let latest = sessions
                    .iter()
                    .max_by(|a, b| session_order(a).cmp(&session_order(b)))
                    .expect("slot has at least one session");
                for metric in Metric::ALL {
                    let cell = matrix
                        .cells
                        .get_mut(&CellKey::new(evaluator, condition, metric))
                        .expect("layout cell");
                    match latest.outcome {
                        Outcome::Refusal => cell.exclusions.refusals += 1,
                        Outcome::TransportError => cell.exclusions.transport_errors += 1,
                        Outcome::Ok => cell.exclusions.parse_failures += 1,
                    }
                }
            }
        }
    }
    matrix
}

/// Reads a run directory and aggregates it.
pub fn aggregate_store(dir: &Path) -> Result<(ExperimentManifest, ScoreMatrix), StoreError> {
    let manifest = read_manifest(dir)?;
    let entries = read_entries(dir)?;
    let matrix = aggregate(&entries, &manifest);
    Ok((manifest, matrix))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("condition {0} is not in the score matrix")]
    UnknownCondition(String),
    #[error("evaluator {0} is not in the score matrix")]
    UnknownEvaluator(String),
}

/// One Welch comparison between two conditions for one evaluator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub evaluator_id: String,
    pub metric: Metric,
    pub first: String,
    pub second: String,
    pub n_first: usize,
    pub n_second: usize,
    pub mean_first: Option<f64>,
    pub mean_second: Option<f64>,
    /// `None` when a sample is too small to test at all.
    pub result: Option<WelchResult>,
}

impl Comparison {
    pub fn p(&self) -> Option<f64> {
        self.result.as_ref().and_then(|r| r.p)
    }

    pub fn label(&self) -> &'static str {
        stats::significance_label(self.p())
    }
}

/// Runs every pair for every evaluator (or just `evaluator`).
pub fn compare(
    matrix: &ScoreMatrix,
    pairs: &[(String, String)],
    metric: Metric,
    evaluator: Option<&str>,
    opts: WelchOptions,
) -> Result<Vec<Comparison>, CompareError> {
    for (a, b) in pairs {
        for c in [a, b] {
            if !matrix.conditions.contains(c) {
                return Err(CompareError::UnknownCondition(c.clone()));
            }
        }
    }
    let evaluators: Vec<&String> = match evaluator {
        Some(id) => vec![matrix
            .evaluators
            .iter()
            .find(|e| *e == id)
            .ok_or_else(|| CompareError::UnknownEvaluator(id.to_string()))?],
        None => matrix.evaluators.iter().collect(),
    };
    let mut out = Vec::new();
    for ev in evaluators {
        for (a, b) in pairs {
            let xs = matrix.values(ev, a, metric).unwrap_or_default();
            let ys = matrix.values(ev, b, metric).unwrap_or_default();
            let result = match stats::welch_test(&xs, &ys, opts) {
                Ok(r) => Some(r),
                Err(StatsError::SampleTooSmall(_)) => None,
                Err(e) => unreachable!("scores are finite: {e}"),
            };
            let mean = |v: &[f64]| (!v.is_empty()).then(|| stats::mean(v));
            out.push(Comparison {
                evaluator_id: ev.clone(),
                metric,
                first: a.clone(),
                second: b.clone(),
                n_first: xs.len(),
                n_second: ys.len(),
                mean_first: mean(&xs),
                mean_second: mean(&ys),
                result,
            });
        }
    }
    Ok(out)
}

/// Parses `A:B` condition pairs.
pub fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once(':') {
        Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
            Ok((a.trim().to_string(), b.trim().to_string()))
        }
        _ => Err(format!("expected CONDITION:CONDITION, got {s:?}")),
    }
}
