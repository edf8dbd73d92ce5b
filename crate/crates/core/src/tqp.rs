//! Parser for evaluator responses to the transition-quantifying rubric.
//!
//! Judges format their answers loosely: numbered headings, `###` markdown,
//! bold labels, headings with the value on the same line. Sections are
//! therefore located by keyword rather than by position, so the six rubric
//! sections (plus the one-line curve summary) may appear in any order.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneBand {
    PurelyLogical,
    RationalDominant,
    Balanced,
    EmotionDominant,
    FullyAffectionate,
}

impl ToneBand {
    pub const ALL: [ToneBand; 5] = [
        ToneBand::PurelyLogical,
        ToneBand::RationalDominant,
        ToneBand::Balanced,
        ToneBand::EmotionDominant,
        ToneBand::FullyAffectionate,
    ];

    /// Inclusive score interval as written in the rubric.
    pub fn range(self) -> (f64, f64) {
        match self {
            ToneBand::PurelyLogical => (0.0, 0.0),
            ToneBand::RationalDominant => (1.0, 3.0),
            ToneBand::Balanced => (4.0, 6.0),
            ToneBand::EmotionDominant => (7.0, 9.0),
            ToneBand::FullyAffectionate => (10.0, 10.0),
        }
    }

    pub fn contains(self, score: f64) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&score)
    }

    /// Score used when the judge names a band without a number.
    pub fn midpoint(self) -> f64 {
        match self {
            ToneBand::PurelyLogical => 0.0,
            ToneBand::RationalDominant => 2.0,
            ToneBand::Balanced => 5.0,
            ToneBand::EmotionDominant => 8.0,
            ToneBand::FullyAffectionate => 10.0,
        }
    }

    /// Nearest band for a score, splitting the gaps between bands at x.5.
    pub fn for_score(score: f64) -> ToneBand {
        if score < 0.5 {
            ToneBand::PurelyLogical
        } else if score < 3.5 {
            ToneBand::RationalDominant
        } else if score < 6.5 {
            ToneBand::Balanced
        } else if score < 9.5 {
            ToneBand::EmotionDominant
        } else {
            ToneBand::FullyAffectionate
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ToneBand::PurelyLogical => "purely_logical",
            ToneBand::RationalDominant => "rational_dominant",
            ToneBand::Balanced => "balanced",
            ToneBand::EmotionDominant => "emotion_dominant",
            ToneBand::FullyAffectionate => "fully_affectionate",
        }
    }
}

impl fmt::Display for ToneBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub text: String,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TqpEvaluation {
    pub tone_band: ToneBand,
    pub tone_phase_score: f64,
    pub tsundere_score: f64,
    pub emotive_markers: Vec<String>,
    pub phase_shift_text: Option<String>,
    pub quotes: Vec<String>,
    pub interpretation: String,
    pub curve_summary: Option<CurveSummary>,
}

/// Closed set of diagnostic codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningCode {
    MidpointImputed,
    BandInferred,
    BandMismatch,
    CurveDivergence,
    SectionMissing,
    DuplicateSection,
    EmptySection,
}

impl WarningCode {
    pub fn as_str(self) -> &'static str {
        match self {
            WarningCode::MidpointImputed => "MIDPOINT_IMPUTED",
            WarningCode::BandInferred => "BAND_INFERRED",
            WarningCode::BandMismatch => "BAND_MISMATCH",
            WarningCode::CurveDivergence => "CURVE_DIVERGENCE",
            WarningCode::SectionMissing => "SECTION_MISSING",
            WarningCode::DuplicateSection => "DUPLICATE_SECTION",
            WarningCode::EmptySection => "EMPTY_SECTION",
        }
    }
}

impl fmt::Display for WarningCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub code: WarningCode,
    pub message: String,
}

impl Warning {
    fn new(code: WarningCode, message: impl Into<String>) -> Self {
        Warning {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    TonePhase,
    TsundereScore,
    EmotiveMarkers,
    PhaseShift,
    Quotes,
    Interpretation,
    CurveSummary,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::TonePhase => "tone_phase",
            Section::TsundereScore => "tsundere_score",
            Section::EmotiveMarkers => "emotive_markers",
            Section::PhaseShift => "phase_shift",
            Section::Quotes => "quotes",
            Section::Interpretation => "interpretation",
            Section::CurveSummary => "curve_summary",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub warnings: Vec<Warning>,
    /// Character offsets (not bytes) of each located section, heading included.
    pub source_spans: BTreeMap<Section, Range<usize>>,
}

impl ParseDiagnostics {
    pub fn has(&self, code: WarningCode) -> bool {
        self.warnings.iter().any(|w| w.code == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParseErrorKind {
    EmptyInput,
    MissingScore,
    MissingToneSection,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
    pub diagnostics: ParseDiagnostics,
}

// ---------------------------------------------------------------------------
// Section location
// ---------------------------------------------------------------------------

struct Patterns {
    heading_prefix: Regex,
    headings: Vec<(Section, Regex)>,
    bands: Vec<(ToneBand, Regex)>,
    score_annotation: Regex,
    scale_annotation: Regex,
    number: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("static pattern");
        Patterns {
            // markdown hashes, emphasis, quote markers and numbering ahead of a heading keyword
            heading_prefix: re(r"^(?:[#>*_\s]|\d{1,2}\s*[.)]|\(\d{1,2}\))*"),
            // order matters: the curve heading also starts with "tsun-dere"
            headings: vec![
                (Section::CurveSummary, re(r"(?i)^tsun[\s-]?dere\s+curve")),
                (Section::TsundereScore, re(r"(?i)^tsun[\s-]?dere\s+score")),
                (Section::TonePhase, re(r"(?i)^tone[\s-]?phase")),
                (Section::EmotiveMarkers, re(r"(?i)^emoti(?:ve|onal)\s+markers?")),
                (Section::PhaseShift, re(r"(?i)^phase[\s-]?shift")),
                (
                    Section::Quotes,
                    re(r"(?i)^(?:quote[\s-]?based|quotes?\s+evidence|supporting\s+quotes|key\s+quotes|evidence\b)"),
                ),
                (Section::Interpretation, re(r"(?i)^(?:overall\s+)?interpretation\b")),
            ],
            bands: vec![
                (ToneBand::PurelyLogical, re(r"(?i)purely[\s-]+logical")),
                (ToneBand::RationalDominant, re(r"(?i)rational[\s-]+dominant")),
                (ToneBand::Balanced, re(r"(?i)\bbalanced\b")),
                (ToneBand::EmotionDominant, re(r"(?i)emotion(?:ally)?[\s-]+dominant")),
                (
                    ToneBand::FullyAffectionate,
                    re(r"(?i)fully\s+affectionate|emotionally\s+engaged"),
                ),
            ],
            score_annotation: re(r"(?i)\bscore\s*(?:of\s+|[:=]\s*)(\d+(?:\.\d+)?)"),
            scale_annotation: re(r"\(?\s*\b0\s*(?:-|–|—|~|to)\s*10\b\s*\)?"),
            number: re(r"\d+(?:\.\d+)?"),
        }
    })
}

struct Line<'a> {
    text: &'a str,
    char_start: usize,
    char_end: usize,
}

fn split_lines(raw: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut chars_before = 0;
    for piece in raw.split_inclusive('\n') {
        let n = piece.chars().count();
        let text = piece.trim_end_matches(['\n', '\r']);
        out.push(Line {
            text,
            char_start: chars_before,
            char_end: chars_before + text.chars().count(),
        });
        chars_before += n;
    }
    out
}

fn is_bullet(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("- ") || t.starts_with("* ") || t.starts_with("• ") || t == "-" || t == "*"
}

/// If `line` is a section heading, returns the section and whatever follows
/// the heading label on the same line (e.g. an inline score).
fn classify_heading(line: &str) -> Option<(Section, String)> {
    if is_bullet(line) {
        return None;
    }
    let p = patterns();
    let prefix_len = p.heading_prefix.find(line).map_or(0, |m| m.end());
    let rest = &line[prefix_len..];
    for (section, re) in &p.headings {
        if let Some(m) = re.find(rest) {
            let tail = &rest[m.end()..];
            return Some((*section, heading_remainder(tail)));
        }
    }
    None
}

/// Drops the rest of the heading label (words up to a colon, or closing
/// emphasis) and returns the inline payload, if any.
fn heading_remainder(tail: &str) -> String {
    let tail = match tail.find(':') {
        Some(i) => &tail[i + 1..],
        None => {
            // "Tsun-Dere Score (0-10) 7.3" or "### **Tone Phase Classification**"
            let mut t = tail;
            while let Some(c) = t.chars().next() {
                if c.is_alphabetic() || c == ' ' || c == '-' {
                    t = &t[c.len_utf8()..];
                } else {
                    break;
                }
            }
            t
        }
    };
    strip_emphasis(tail.trim())
}

fn strip_emphasis(s: &str) -> String {
    s.trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace())
        .to_string()
}

struct RawSection {
    inline: String,
    body: Vec<String>,
    span: Range<usize>,
}

impl RawSection {
    /// Inline payload and body lines joined, trimmed.
    fn full_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if !self.inline.is_empty() {
            parts.push(&self.inline);
        }
        let body = self.body.join("\n");
        let body = body.trim();
        if !body.is_empty() {
            parts.push(body);
        }
        parts.join("\n")
    }

    fn is_empty(&self) -> bool {
        self.full_text().is_empty()
    }
}

fn locate_sections(raw: &str, diags: &mut ParseDiagnostics) -> BTreeMap<Section, RawSection> {
    let mut sections: BTreeMap<Section, RawSection> = BTreeMap::new();
    let mut current: Option<Section> = None;
    let mut skipping_duplicate = false;
    for line in split_lines(raw) {
        if let Some((section, inline)) = classify_heading(line.text) {
            if sections.contains_key(&section) {
                diags.warnings.push(Warning::new(
                    WarningCode::DuplicateSection,
                    format!(
                        "{} appears more than once; keeping the first",
                        section.as_str()
                    ),
                ));
                skipping_duplicate = true;
                current = Some(section);
                continue;
            }
            skipping_duplicate = false;
            current = Some(section);
            sections.insert(
                section,
                RawSection {
                    inline,
                    body: Vec::new(),
                    span: line.char_start..line.char_end,
                },
            );
            continue;
        }
        if skipping_duplicate {
            continue;
        }
        if let Some(sec) = current.and_then(|s| sections.get_mut(&s)) {
            sec.body.push(line.text.to_string());
            if !line.text.trim().is_empty() {
                sec.span.end = line.char_end;
            }
        }
    }
    for (section, raw) in &sections {
        diags.source_spans.insert(*section, raw.span.clone());
    }
    sections
}

// ---------------------------------------------------------------------------
// Field extraction
// ---------------------------------------------------------------------------

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// First number in [0, 10], ignoring "(0–10)" scale annotations.
fn first_score(text: &str) -> Option<f64> {
    let p = patterns();
    let cleaned = p.scale_annotation.replace_all(text, " ");
    p.number
        .find_iter(&cleaned)
        .filter_map(|m| parse_number(m.as_str()))
        .find(|v| (0.0..=10.0).contains(v))
}

fn score_annotation(text: &str) -> Option<f64> {
    patterns()
        .score_annotation
        .captures_iter(text)
        .filter_map(|c| parse_number(&c[1]))
        .find(|v| (0.0..=10.0).contains(v))
}

fn earliest_band(text: &str) -> Option<ToneBand> {
    patterns()
        .bands
        .iter()
        .filter_map(|(band, re)| re.find(text).map(|m| (m.start(), *band)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, band)| band)
}

fn list_items(section: &RawSection) -> Vec<String> {
    static ITEM: OnceLock<Regex> = OnceLock::new();
    let item = ITEM
        .get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d{1,2}[.)])\s+(.*)$").expect("static pattern"));
    let mut items: Vec<String> = section
        .body
        .iter()
        .filter_map(|l| item.captures(l).map(|c| c[1].trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        items = std::iter::once(section.inline.clone())
            .chain(section.body.iter().cloned())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    items
}

fn curve_summary(section: &RawSection) -> Option<CurveSummary> {
    let first = std::iter::once(section.inline.as_str())
        .chain(section.body.iter().map(String::as_str))
        .map(str::trim)
        .find(|l| !l.is_empty())?;
    let text = first
        .trim_start_matches(['>', ' '])
        .trim_matches(|c: char| matches!(c, '"' | '“' | '”' | '*' | '_') || c.is_whitespace())
        .to_string();
    if text.is_empty() {
        return None;
    }
    let score = score_annotation(&text);
    Some(CurveSummary { text, score })
}

/// Parses a raw evaluator response.
///
/// Fails with `MissingToneSection` when no tone classification can be
/// recovered and with `MissingScore` when the Tsun-Dere section has no number
/// in [0, 10]. Everything else degrades to warnings.
pub fn parse_evaluation(raw: &str) -> Result<(TqpEvaluation, ParseDiagnostics), ParseError> {
    let mut diags = ParseDiagnostics::default();
    if raw.trim().is_empty() {
        return Err(ParseError {
            kind: ParseErrorKind::EmptyInput,
            message: "evaluation text is empty".into(),
            diagnostics: diags,
        });
    }
    let sections = locate_sections(raw, &mut diags);

    let tsundere_score = sections
        .get(&Section::TsundereScore)
        .and_then(|s| first_score(&s.full_text()));
    let Some(tsundere_score) = tsundere_score else {
        let message = if sections.contains_key(&Section::TsundereScore) {
            "Tsun-Dere section has no score in [0, 10]"
        } else {
            "no Tsun-Dere score section"
        };
        return Err(ParseError {
            kind: ParseErrorKind::MissingScore,
            message: message.into(),
            diagnostics: diags,
        });
    };

    let tone_text = sections.get(&Section::TonePhase).map(RawSection::full_text);
    let band = tone_text.as_deref().and_then(earliest_band);
    let annotated = tone_text.as_deref().and_then(score_annotation);
    let (tone_band, tone_phase_score) = match (band, annotated) {
        (Some(band), Some(score)) => (band, score),
        (Some(band), None) => {
            diags.warnings.push(Warning::new(
                WarningCode::MidpointImputed,
                format!(
                    "no numeric tone score; using the {band} midpoint {}",
                    band.midpoint()
                ),
            ));
            (band, band.midpoint())
        }
        (None, Some(score)) => {
            let band = ToneBand::for_score(score);
            diags.warnings.push(Warning::new(
                WarningCode::BandInferred,
                format!("no band label; inferred {band} from score {score}"),
            ));
            (band, score)
        }
        (None, None) => {
            return Err(ParseError {
                kind: ParseErrorKind::MissingToneSection,
                message: if tone_text.is_some() {
                    "tone section names neither a band nor a score".into()
                } else {
                    "no tone phase classification section".into()
                },
                diagnostics: diags,
            })
        }
    };

    for section in [
        Section::EmotiveMarkers,
        Section::PhaseShift,
        Section::Quotes,
        Section::Interpretation,
    ] {
        match sections.get(&section) {
            None => diags.warnings.push(Warning::new(
                WarningCode::SectionMissing,
                format!("{} section not found", section.as_str()),
            )),
            Some(s) if s.is_empty() => diags.warnings.push(Warning::new(
                WarningCode::EmptySection,
                format!("{} section is empty", section.as_str()),
            )),
            Some(_) => {}
        }
    }

    let evaluation = TqpEvaluation {
        tone_band,
        tone_phase_score,
        tsundere_score,
        emotive_markers: sections
            .get(&Section::EmotiveMarkers)
            .map(list_items)
            .unwrap_or_default(),
        phase_shift_text: sections
            .get(&Section::PhaseShift)
            .map(RawSection::full_text)
            .filter(|t| !t.is_empty()),
        quotes: sections
            .get(&Section::Quotes)
            .map(list_items)
            .unwrap_or_default(),
        interpretation: sections
            .get(&Section::Interpretation)
            .map(RawSection::full_text)
            .unwrap_or_default(),
        curve_summary: sections.get(&Section::CurveSummary).and_then(curve_summary),
    };
    diags.warnings.extend(check_band_consistency(&evaluation));
    Ok((evaluation, diags))
}

/// Cross-checks the numeric tone score against its band and the curve
/// summary score against the Tsun-Dere score.
pub fn check_band_consistency(eval: &TqpEvaluation) -> Vec<Warning> {
    let mut warnings = Vec::new();
    if !eval.tone_band.contains(eval.tone_phase_score) {
        let (lo, hi) = eval.tone_band.range();
        warnings.push(Warning::new(
            WarningCode::BandMismatch,
            format!(
                "tone score {} outside {} range [{lo}, {hi}]",
                eval.tone_phase_score, eval.tone_band
            ),
        ));
    }
    if let Some(curve) = eval.curve_summary.as_ref().and_then(|c| c.score) {
        if (curve - eval.tsundere_score).abs() > 0.5 {
            warnings.push(Warning::new(
                WarningCode::CurveDivergence,
                format!(
                    "curve score {curve} vs Tsun-Dere score {}",
                    eval.tsundere_score
                ),
            ));
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG_TIPC5: &str = include_str!("../fixtures/appendix/tqp1_gpt4o_TIPc1_log5.txt");
    const LOG_TIPE2: &str = include_str!("../fixtures/appendix/tqp1_gpt4o_TIPe1_log2.txt");
    const LOG_TIPNE2: &str = include_str!("../fixtures/appendix/tqp1_gpt4o_TIPn-e1_log2.txt");

    fn eval_with(band: ToneBand, score: f64) -> TqpEvaluation {
        TqpEvaluation {
            tone_band: band,
            tone_phase_score: score,
            tsundere_score: 5.0,
            emotive_markers: vec![],
            phase_shift_text: None,
            quotes: vec![],
            interpretation: String::new(),
            curve_summary: None,
        }
    }

    #[test]
    fn appendix_tipc_log5() {
        let (e, d) = parse_evaluation(LOG_TIPC5).unwrap();
        assert_eq!(e.tone_band, ToneBand::Balanced);
        assert_eq!(e.tone_phase_score, 6.0);
        assert_eq!(e.tsundere_score, 7.3);
        assert_eq!(e.emotive_markers.len(), 4);
        assert_eq!(e.quotes.len(), 3);
        assert!(e
            .phase_shift_text
            .as_deref()
            .unwrap()
            .starts_with("Around the “Craft Integration Constraints” section."));
        assert!(e
            .interpretation
            .starts_with("This response is a clever example"));
        assert_eq!(e.curve_summary.unwrap().score, Some(7.3));
        assert!(d.warnings.is_empty(), "{:?}", d.warnings);
        assert_eq!(d.source_spans.len(), 7);
    }

    #[test]
    fn appendix_tipe_log2_without_space_after_colon() {
        let (e, d) = parse_evaluation(LOG_TIPE2).unwrap();
        assert_eq!((e.tone_phase_score, e.tsundere_score), (6.0, 7.5));
        let curve = e.curve_summary.unwrap();
        assert!(curve
            .text
            .starts_with("This is a classic smirk-to-swoon progression"));
        assert_eq!(curve.score, Some(7.5));
        assert!(d.warnings.is_empty(), "{:?}", d.warnings);
    }

    #[test]
    fn appendix_tipne_log2() {
        let (e, _) = parse_evaluation(LOG_TIPNE2).unwrap();
        assert_eq!((e.tone_phase_score, e.tsundere_score), (6.0, 7.8));
        assert_eq!(e.curve_summary.unwrap().score, Some(7.8));
        assert_eq!(e.emotive_markers.len(), 4);
        assert!(e
            .phase_shift_text
            .unwrap()
            .contains("Traditional Crafts: The Memory"));
    }

    #[test]
    fn deleting_tsundere_section_is_missing_score() {
        let start = LOG_TIPC5.find("2. Tsun-Dere Score").unwrap();
        let end = LOG_TIPC5.find("3. Emotive Markers").unwrap();
        let cut = format!("{}{}", &LOG_TIPC5[..start], &LOG_TIPC5[end..]);
        let err = parse_evaluation(&cut).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::MissingScore);
    }

    #[test]
    fn missing_tone_section() {
        let err = parse_evaluation("2. Tsun-Dere Score: 4\nsome text").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::MissingToneSection);
        assert_eq!(
            parse_evaluation("  \n").unwrap_err().kind,
            ParseErrorKind::EmptyInput
        );
    }

    #[test]
    fn midpoint_imputed_when_band_has_no_number() {
        let raw = "1. Tone Phase Classification:\nMixed but Emotion-Dominant\n\n2. Tsun-Dere Score: 8.1\n";
        let (e, d) = parse_evaluation(raw).unwrap();
        assert_eq!(e.tone_band, ToneBand::EmotionDominant);
        assert_eq!(e.tone_phase_score, 8.0);
        assert!(d.has(WarningCode::MidpointImputed));
        assert!(d.has(WarningCode::SectionMissing));
    }

    #[test]
    fn score_formats() {
        for (line, want) in [
            ("Tsun-Dere Score (0–10): 7.3", 7.3),
            ("Tsun-Dere Score: 7.8", 7.8),
            ("Tsun-Dere Score (0–10):7.5", 7.5),
            ("### **2. Tsun-Dere Score (0-10)**\n\n**Score: 5.5**", 5.5),
            ("**Tsun-Dere Score:** 7.4/10", 7.4),
            ("Tsundere score: 12 or rather 9", 9.0),
        ] {
            let raw = format!("Tone Phase: Balanced (score: 5)\n{line}\n");
            let (e, _) = parse_evaluation(&raw).unwrap();
            assert_eq!(e.tsundere_score, want, "{line}");
        }
    }

    #[test]
    fn band_consistency_examples() {
        assert!(check_band_consistency(&eval_with(ToneBand::Balanced, 6.0)).is_empty());
        let w = check_band_consistency(&eval_with(ToneBand::PurelyLogical, 3.0));
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].code, WarningCode::BandMismatch);
        assert!(check_band_consistency(&eval_with(ToneBand::RationalDominant, 2.5)).is_empty());

        let mut e = eval_with(ToneBand::Balanced, 5.0);
        e.curve_summary = Some(CurveSummary {
            text: "x".into(),
            score: Some(6.0),
        });
        let w = check_band_consistency(&e);
        assert_eq!(w[0].code, WarningCode::CurveDivergence);
    }

    #[test]
    fn band_ranges_partition_integers() {
        for score in 0..=10 {
            let hits = ToneBand::ALL
                .iter()
                .filter(|b| b.contains(score as f64))
                .count();
            assert_eq!(hits, 1, "score {score}");
            assert!(ToneBand::for_score(score as f64).contains(score as f64));
        }
    }

    #[test]
    fn bullets_are_not_headings() {
        assert!(classify_heading("- **Quote-Based Evidence:** nope").is_none());
        assert!(classify_heading("* Tone Phase is fine").is_none());
        let (s, inline) = classify_heading("### **2. Tsun-Dere Score (0–10)**").unwrap();
        assert_eq!(s, Section::TsundereScore);
        assert_eq!(inline, "(0–10)");
        let (s, inline) =
            classify_heading("**Tone Phase Classification:** Balanced (score: 5)").unwrap();
        assert_eq!(s, Section::TonePhase);
        assert_eq!(inline, "Balanced (score: 5)");
    }

    #[test]
    fn duplicate_sections_keep_first() {
        let raw = "Tone Phase: Balanced (score: 4)\nTsun-Dere Score: 3\nTsun-Dere Score: 9\n";
        let (e, d) = parse_evaluation(raw).unwrap();
        assert_eq!(e.tsundere_score, 3.0);
        assert!(d.has(WarningCode::DuplicateSection));
    }
}
