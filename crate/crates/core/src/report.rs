//! Beeswarm figure and score tables.
//!
//! The SVG has one panel per metric (metric-major). Each panel holds one
//! column per (evaluator, condition) group with a dot per score, a median
//! bar, an "x" at the mean and a whisker line spanning the Tukey fences.
//! Dot jitter is derived from record ids, so the output is byte-stable for a
//! given store.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::experiment::{Comparison, Metric, ScoreEntry, ScoreMatrix};
use crate::stats::{self, SampleStats};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("score matrix is empty")]
    EmptyMatrix,
    #[error(
        "comparison references group {evaluator}/{condition}/{metric}, which is not in the figure"
    )]
    UnknownGroup {
        evaluator: String,
        condition: String,
        metric: Metric,
    },
    #[error("summary CSV line {line}: {message}")]
    BadCsv { line: usize, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct GroupKey {
    pub evaluator: String,
    pub condition: String,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceMark {
    /// Indices into [`FigureSpec::groups`].
    pub first: usize,
    pub second: usize,
    pub p: Option<f64>,
    pub label: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Style {
    pub column_width: f64,
    pub plot_height: f64,
    pub dot_radius: f64,
    pub dot_fill: String,
    pub stroke: String,
    pub font_size: f64,
}

impl Default for Style {
    fn default() -> Self {
        Style {
            column_width: 64.0,
            plot_height: 300.0,
            dot_radius: 3.5,
            dot_fill: "#4c72b0".into(),
            stroke: "#222222".into(),
            font_size: 12.0,
        }
    }
}

/// Everything needed to draw the figure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureSpec {
    pub groups: Vec<GroupKey>,
    pub significance: Vec<SignificanceMark>,
    pub style: Style,
}

impl FigureSpec {
    pub fn from_matrix(
        matrix: &ScoreMatrix,
        comparisons: &[Comparison],
    ) -> Result<Self, ReportError> {
        if matrix.is_empty() {
            return Err(ReportError::EmptyMatrix);
        }
        let mut groups = Vec::new();
        for metric in Metric::ALL {
            for evaluator in &matrix.evaluators {
                for condition in &matrix.conditions {
                    if matrix.cell(evaluator, condition, metric).is_some() {
                        groups.push(GroupKey {
                            evaluator: evaluator.clone(),
                            condition: condition.clone(),
                            metric,
                        });
                    }
                }
            }
        }
        let index = |evaluator: &str, condition: &str, metric: Metric| {
            groups
                .iter()
                .position(|g| {
                    g.evaluator == evaluator && g.condition == condition && g.metric == metric
                })
                .ok_or_else(|| ReportError::UnknownGroup {
                    evaluator: evaluator.to_string(),
                    condition: condition.to_string(),
                    metric,
                })
        };
        let mut significance = Vec::new();
        for c in comparisons {
            significance.push(SignificanceMark {
                first: index(&c.evaluator_id, &c.first, c.metric)?,
                second: index(&c.evaluator_id, &c.second, c.metric)?,
                p: c.p(),
                label: c.label(),
            });
        }
        Ok(FigureSpec {
            groups,
            significance,
            style: Style::default(),
        })
    }
}

/// 64-bit FNV-1a.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Horizontal offsets for one group's dots, returned in the order of
/// `scores`.
///
/// Dots that would overlap vertically share a row; within a row they take
/// alternating right/left slots, squeezed to fit the column. Row members are
/// ordered by the hash of their record id.
pub fn jitter_offsets(scores: &[ScoreEntry], y_of: impl Fn(f64) -> f64, style: &Style) -> Vec<f64> {
    let diameter = 2.0 * style.dot_radius;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .value
            .total_cmp(&scores[b].value)
            .then(fnv1a(&scores[a].record_id).cmp(&fnv1a(&scores[b].record_id)))
            .then(scores[a].record_id.cmp(&scores[b].record_id))
    });
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut row_y = f64::NAN;
    for i in order {
        let y = y_of(scores[i].value);
        if rows.is_empty() || (y - row_y).abs() >= diameter {
            rows.push(Vec::new());
            row_y = y;
        }
        rows.last_mut().expect("row pushed").push(i);
    }
    let half = style.column_width / 2.0 - style.dot_radius - 2.0;
    let mut offsets = vec![0.0; scores.len()];
    for row in rows {
        let slots_per_side = (row.len() / 2) as f64;
        let step = if slots_per_side > 0.0 {
            (diameter + 1.0).min(half / slots_per_side)
        } else {
            0.0
        };
        for (k, &i) in row.iter().enumerate() {
            let level = k.div_ceil(2) as f64;
            let side = if k % 2 == 1 { 1.0 } else { -1.0 };
            offsets[i] = (side * level * step).clamp(-half, half);
        }
    }
    offsets
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const MARGIN_LEFT: f64 = 48.0;
const PANEL_GAP: f64 = 40.0;
const TITLE_HEIGHT: f64 = 24.0;
const BRACKET_STEP: f64 = 18.0;
const AXIS_LABELS: f64 = 44.0;

/// Renders the SVG document for `spec`.
pub fn render_svg(matrix: &ScoreMatrix, spec: &FigureSpec) -> String {
    let st = &spec.style;
    let panels: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| spec.groups.iter().any(|g| g.metric == *m))
        .collect();
    let max_cols = panels
        .iter()
        .map(|m| spec.groups.iter().filter(|g| g.metric == *m).count())
        .max()
        .unwrap_or(0);
    let max_marks = panels
        .iter()
        .map(|m| {
            spec.significance
                .iter()
                .filter(|s| spec.groups[s.first].metric == *m)
                .count()
        })
        .max()
        .unwrap_or(0);
    let bracket_area = BRACKET_STEP * max_marks as f64 + 8.0;
    let panel_w = MARGIN_LEFT + st.column_width * max_cols as f64 + 16.0;
    let panel_h = TITLE_HEIGHT + bracket_area + st.plot_height + AXIS_LABELS;
    let width = panel_w * panels.len() as f64 + PANEL_GAP * (panels.len().saturating_sub(1)) as f64;
    let height = panel_h;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}" font-family="sans-serif" font-size="{:.1}">"#,
        st.font_size
    );
    let _ = writeln!(
        svg,
        r#"<rect class="background" x="0" y="0" width="{width:.1}" height="{height:.1}" fill="white"/>"#
    );

    for (pi, metric) in panels.iter().enumerate() {
        let x0 = pi as f64 * (panel_w + PANEL_GAP);
        let top = TITLE_HEIGHT + bracket_area;
        let bottom = top + st.plot_height;
        let y_of = |v: f64| bottom - v.clamp(0.0, 10.0) / 10.0 * st.plot_height;
        let _ = writeln!(
            svg,
            r#"<g class="panel" data-metric="{}">"#,
            metric.as_str()
        );
        let _ = writeln!(
            svg,
            r#"<text class="title" x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{}</text>"#,
            x0 + panel_w / 2.0,
            TITLE_HEIGHT - 8.0,
            metric.label()
        );
        let axis_x = x0 + MARGIN_LEFT - 6.0;
        let _ = writeln!(
            svg,
            r#"<line class="axis" x1="{axis_x:.1}" y1="{top:.1}" x2="{axis_x:.1}" y2="{bottom:.1}" stroke="{}"/>"#,
            st.stroke
        );
        for tick in (0..=10).step_by(2) {
            let y = y_of(f64::from(tick));
            let _ = writeln!(
                svg,
                r#"<line class="tick" x1="{:.1}" y1="{y:.1}" x2="{axis_x:.1}" y2="{y:.1}" stroke="{}"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"#,
                axis_x - 4.0,
                st.stroke,
                axis_x - 6.0,
                y + 4.0
            );
        }

        let columns: Vec<usize> = (0..spec.groups.len())
            .filter(|&i| spec.groups[i].metric == *metric)
            .collect();
        let mut centre = BTreeMap::new();
        for (ci, &gi) in columns.iter().enumerate() {
            let g = &spec.groups[gi];
            let cx = x0 + MARGIN_LEFT + st.column_width * (ci as f64 + 0.5);
            centre.insert(gi, cx);
            let scores = matrix
                .cell(&g.evaluator, &g.condition, g.metric)
                .map(|c| c.scores.clone())
                .unwrap_or_default();
            let _ = writeln!(
                svg,
                r#"<g class="group" data-evaluator="{}" data-condition="{}" data-n="{}">"#,
                xml_escape(&g.evaluator),
                xml_escape(&g.condition),
                scores.len()
            );
            let offsets = jitter_offsets(&scores, y_of, st);
            for (s, dx) in scores.iter().zip(&offsets) {
                let _ = writeln!(
                    svg,
                    r#"<circle class="dot" cx="{:.2}" cy="{:.2}" r="{:.1}" fill="{}" fill-opacity="0.75" data-record="{}" data-value="{}"/>"#,
                    cx + dx,
                    y_of(s.value),
                    st.dot_radius,
                    st.dot_fill,
                    xml_escape(&s.record_id),
                    s.value
                );
            }
            let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
            if let Ok(d) = stats::describe(&values) {
                draw_summary_marks(&mut svg, &d, cx, &y_of, st);
            }
            let _ = writeln!(
                svg,
                r#"<text class="condition" x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                bottom + 16.0,
                xml_escape(&g.condition)
            );
            let _ = writeln!(
                svg,
                r#"<text class="evaluator" x="{cx:.1}" y="{:.1}" text-anchor="middle" fill="dimgray">{} (n={})</text>"#,
                bottom + 32.0,
                xml_escape(&g.evaluator),
                scores.len()
            );
            let _ = writeln!(svg, "</g>");
        }

        let marks = spec
            .significance
            .iter()
            .filter(|s| spec.groups[s.first].metric == *metric);
        for (level, mark) in marks.enumerate() {
            let (xa, xb) = (centre[&mark.first], centre[&mark.second]);
            let (xa, xb) = (xa.min(xb), xa.max(xb));
            let y = top - 6.0 - BRACKET_STEP * level as f64;
            let _ = writeln!(
                svg,
                r#"<path class="bracket" d="M{xa:.1},{:.1} L{xa:.1},{y:.1} L{xb:.1},{y:.1} L{xb:.1},{:.1}" fill="none" stroke="{}"/>"#,
                y + 4.0,
                y + 4.0,
                st.stroke
            );
            let p = mark.p.map_or_else(|| "N/A".to_string(), stats::format_sig6);
            let _ = writeln!(
                svg,
                r#"<text class="sig" x="{:.1}" y="{:.1}" text-anchor="middle" data-p="{p}">{}</text>"#,
                (xa + xb) / 2.0,
                y - 2.0,
                xml_escape(mark.label)
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

fn draw_summary_marks(
    svg: &mut String,
    d: &SampleStats,
    cx: f64,
    y_of: &impl Fn(f64) -> f64,
    st: &Style,
) {
    let half = st.column_width * 0.32;
    let (lo, hi) = (y_of(d.whisker_low), y_of(d.whisker_high));
    let _ = writeln!(
        svg,
        r#"<line class="whisker" x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="{}" stroke-width="1"/>"#,
        st.stroke
    );
    let ym = y_of(d.median);
    let _ = writeln!(
        svg,
        r#"<line class="median" x1="{:.2}" y1="{ym:.2}" x2="{:.2}" y2="{ym:.2}" stroke="{}" stroke-width="2"/>"#,
        cx - half,
        cx + half,
        st.stroke
    );
    let (ymean, k) = (y_of(d.mean), 4.0);
    let _ = writeln!(
        svg,
        r#"<path class="mean" d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="firebrick" stroke-width="2" data-mean="{}"/>"#,
        cx - k,
        ymean - k,
        cx + k,
        ymean + k,
        cx - k,
        ymean + k,
        cx + k,
        ymean - k,
        d.mean
    );
}

fn write_file(path: &Path, text: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| ReportError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Renders the figure and writes it to `out`. Returns the document.
pub fn emit_beeswarm(
    matrix: &ScoreMatrix,
    comparisons: &[Comparison],
    out: &Path,
) -> Result<String, ReportError> {
    let spec = FigureSpec::from_matrix(matrix, comparisons)?;
    let svg = render_svg(matrix, &spec);
    write_file(out, &svg)?;
    Ok(svg)
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

pub const CSV_HEADER: [&str; 9] = [
    "row",
    "evaluator",
    "condition",
    "response",
    "eval",
    "tone_phase",
    "tsundere",
    "record_id",
    "n",
];

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".to_string(), |v| v.to_string())
}

/// Table-shaped CSV: a `score` row per evaluation, an `ave` row per
/// condition with full-precision means, and a `p` row per compared pair
/// (`condition` holds `A/B`).
pub fn render_summary_csv(
    matrix: &ScoreMatrix,
    comparisons: &[Comparison],
) -> Result<String, ReportError> {
    if matrix.is_empty() {
        return Err(ReportError::EmptyMatrix);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ReportError::Io {
        path: PathBuf::from("<summary>"),
        source: io::Error::other(e),
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for evaluator in &matrix.evaluators {
        for condition in &matrix.conditions {
            let mut rows: BTreeMap<(u32, u32), ScoreRow> = BTreeMap::new();
            for metric in Metric::ALL {
                let Some(cell) = matrix.cell(evaluator, condition, metric) else {
                    continue;
                };
                for s in &cell.scores {
                    let row = rows
                        .entry((s.response_index, s.eval_index))
                        .or_insert_with(|| (s.record_id.clone(), None, None));
                    match metric {
                        Metric::TonePhase => row.1 = Some(s.value),
                        Metric::Tsundere => row.2 = Some(s.value),
                    }
                }
            }
            if rows.is_empty() {
                continue;
            }
            for ((r, e), (id, tone, tsun)) in &rows {
                let cell = |x: &Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([
                    "score",
                    evaluator,
                    condition,
                    &r.to_string(),
                    &e.to_string(),
                    &cell(tone),
                    &cell(tsun),
                    id,
                    "",
                ])
                .map_err(csv_err)?;
            }
            let mean_of = |m: Metric| {
                matrix
                    .values(evaluator, condition, m)
                    .filter(|v| !v.is_empty())
                    .map(|v| stats::mean(&v))
            };
            let n = matrix
                .cell(evaluator, condition, Metric::Tsundere)
                .map_or(0, |c| c.scores.len());
            w.write_record([
                "ave",
                evaluator,
                condition,
                "",
                "",
                &fmt_opt(mean_of(Metric::TonePhase)),
                &fmt_opt(mean_of(Metric::Tsundere)),
                "",
                &n.to_string(),
            ])
            .map_err(csv_err)?;
        }
        for ((first, second), by_metric) in pair_rows(comparisons, evaluator) {
            let p = |m: Metric| by_metric.get(&m).map_or(String::new(), |c| fmt_opt(c.p()));
            w.write_record([
                "p",
                evaluator,
                &format!("{first}/{second}"),
                "",
                "",
                &p(Metric::TonePhase),
                &p(Metric::Tsundere),
                "",
                "",
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

type PairRows<'a> = Vec<((&'a str, &'a str), BTreeMap<Metric, &'a Comparison>)>;

/// Comparisons for one evaluator grouped by pair, in first-seen order.
fn pair_rows<'a>(comparisons: &'a [Comparison], evaluator: &str) -> PairRows<'a> {
    let mut out: PairRows<'a> = Vec::new();
    for c in comparisons.iter().filter(|c| c.evaluator_id == evaluator) {
        let key = (c.first.as_str(), c.second.as_str());
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, m)) => {
                m.insert(c.metric, c);
            }
            None => out.push((key, BTreeMap::from([(c.metric, c)]))),
        }
    }
    out
}

fn fmt2(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".to_string(), |v| format!("{v:.2}"))
}

/// Markdown summary: a means table per evaluator and one line per comparison.
pub fn render_summary_markdown(
    matrix: &ScoreMatrix,
    comparisons: &[Comparison],
) -> Result<String, ReportError> {
    if matrix.is_empty() {
        return Err(ReportError::EmptyMatrix);
    }
    let mut md = String::from("# Score summary\n");
    for evaluator in &matrix.evaluators {
        let _ = writeln!(md, "\n## {evaluator}\n");
        md.push_str("| Condition | n | Tone Phase mean | Tsun-Dere mean | Excluded |\n");
        md.push_str("|---|---:|---:|---:|---:|\n");
        for condition in &matrix.conditions {
            let cell = |m| matrix.cell(evaluator, condition, m);
            let mean = |m| {
                cell(m)
                    .map(|c| c.values())
                    .filter(|v| !v.is_empty())
                    .map(|v| stats::mean(&v))
            };
            let n = cell(Metric::Tsundere).map_or(0, |c| c.scores.len());
            let excluded = cell(Metric::Tsundere).map_or(0, |c| c.exclusions.total());
            let _ = writeln!(
                md,
                "| {condition} | {n} | {} | {} | {excluded} |",
                fmt2(mean(Metric::TonePhase)),
                fmt2(mean(Metric::Tsundere))
            );
        }
        let mine: Vec<&Comparison> = comparisons
            .iter()
            .filter(|c| &c.evaluator_id == evaluator)
            .collect();
        if !mine.is_empty() {
            md.push_str("\nOne-tailed Welch comparisons:\n\n");
        }
        for c in mine {
            let _ = writeln!(md, "- {}", narrate(c));
        }
    }
    Ok(md)
}

fn narrate(c: &Comparison) -> String {
    let head = format!("{}, {} vs {}", c.metric.label(), c.first, c.second);
    let Some(r) = &c.result else {
        return format!(
            "{head}: N/A (too few scores, n = {} and {})",
            c.n_first, c.n_second
        );
    };
    let (Some(t), Some(df), Some(p)) = (r.t, r.df, r.p) else {
        return format!("{head}: N/A (no variance in either condition)");
    };
    let higher = match (c.mean_first, c.mean_second) {
        (Some(a), Some(b)) if b > a => format!(
            "{} higher ({} vs {})",
            c.second,
            fmt2(Some(b)),
            fmt2(Some(a))
        ),
        (Some(a), Some(b)) if a > b => format!(
            "{} higher ({} vs {})",
            c.first,
            fmt2(Some(a)),
            fmt2(Some(b))
        ),
        _ => "equal means".to_string(),
    };
    format!(
        "{head}: {higher}; t = {}, df = {}, p = {} ({})",
        stats::format_sig6(t),
        stats::format_sig6(df),
        stats::format_sig6(p),
        c.label()
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryDocs {
    pub csv: String,
    pub markdown: String,
}

/// Writes the CSV to `csv_out` and the Markdown next to it (or to
/// `markdown_out`).
pub fn emit_summary(
    matrix: &ScoreMatrix,
    comparisons: &[Comparison],
    csv_out: &Path,
    markdown_out: Option<&Path>,
) -> Result<SummaryDocs, ReportError> {
    let csv = render_summary_csv(matrix, comparisons)?;
    let markdown = render_summary_markdown(matrix, comparisons)?;
    write_file(csv_out, &csv)?;
    let md_path = markdown_out.map_or_else(|| csv_out.with_extension("md"), Path::to_path_buf);
    write_file(&md_path, &markdown)?;
    Ok(SummaryDocs { csv, markdown })
}

/// record id, Tone Phase, Tsun-Dere
type ScoreRow = (String, Option<f64>, Option<f64>);

/// (Tone Phase, Tsun-Dere) values of one row.
pub type MetricPair = (Option<f64>, Option<f64>);
/// Tone Phase mean, Tsun-Dere mean, n
pub type AverageRow = (Option<f64>, Option<f64>, usize);

/// Rows recovered from a summary CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryTable {
    /// Rebuilt from the `score` rows.
    pub matrix: ScoreMatrix,
    /// (evaluator, condition) → (tone mean, tsundere mean, n) from `ave` rows.
    pub averages: BTreeMap<(String, String), AverageRow>,
    /// (evaluator, first, second) → (tone p, tsundere p) from `p` rows.
    pub p_values: BTreeMap<(String, String, String), MetricPair>,
}

fn parse_num(s: &str, line: usize, what: &str) -> Result<Option<f64>, ReportError> {
    match s {
        "" | "N/A" => Ok(None),
        s => s
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| ReportError::BadCsv {
                line,
                message: format!("bad {what} value {s:?}"),
            }),
    }
}

fn parse_index(s: &str, line: usize, what: &str) -> Result<u32, ReportError> {
    s.parse().map_err(|_| ReportError::BadCsv {
        line,
        message: format!("bad {what} index {s:?}"),
    })
}

pub fn parse_summary_csv(text: &str) -> Result<SummaryTable, ReportError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let bad = |line: usize, message: String| ReportError::BadCsv { line, message };
    let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(bad(
            1,
            format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }
    let mut table = SummaryTable::default();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| bad(line, e.to_string()))?;
        let f = |k: usize| record.get(k).unwrap_or("");
        let (evaluator, condition) = (f(1).to_string(), f(2).to_string());
        match f(0) {
            "score" => {
                let r = parse_index(f(3), line, "response")?;
                let e = parse_index(f(4), line, "eval")?;
                for (metric, col) in [(Metric::TonePhase, 5), (Metric::Tsundere, 6)] {
                    if let Some(value) = parse_num(f(col), line, metric.as_str())? {
                        table.matrix.insert(
                            &evaluator,
                            &condition,
                            metric,
                            ScoreEntry {
                                response_index: r,
                                eval_index: e,
                                record_id: f(7).to_string(),
                                value,
                            },
                        );
                    }
                }
            }
            "ave" => {
                let n = f(8)
                    .parse()
                    .map_err(|_| bad(line, format!("bad n {:?}", f(8))))?;
                table.averages.insert(
                    (evaluator, condition),
                    (
                        parse_num(f(5), line, "tone_phase")?,
                        parse_num(f(6), line, "tsundere")?,
                        n,
                    ),
                );
            }
            "p" => {
                let (a, b) = condition.split_once('/').ok_or_else(|| {
                    bad(line, format!("p row condition {condition:?} is not A/B"))
                })?;
                table.p_values.insert(
                    (evaluator, a.to_string(), b.to_string()),
                    (
                        parse_num(f(5), line, "tone_phase")?,
                        parse_num(f(6), line, "tsundere")?,
                    ),
                );
            }
            other => return Err(bad(line, format!("unknown row kind {other:?}"))),
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> ScoreMatrix {
        let mut m = ScoreMatrix::default();
        let data = [
            ("TIPc", [5.0, 5.0, 6.0, 3.0]),
            ("TIPe", [6.0, 8.0, 6.0, 7.0]),
        ];
        for (cond, vals) in data {
            for (i, v) in vals.into_iter().enumerate() {
                for metric in Metric::ALL {
                    m.insert(
                        "judge",
                        cond,
                        metric,
                        ScoreEntry {
                            response_index: 1,
                            eval_index: i as u32 + 1,
                            record_id: format!("{cond}-{i}"),
                            value: v + if metric == Metric::Tsundere { 0.5 } else { 0.0 },
                        },
                    );
                }
            }
        }
        m
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let st = Style::default();
        let scores: Vec<ScoreEntry> = (0..15)
            .map(|i| ScoreEntry {
                response_index: 1,
                eval_index: i,
                record_id: format!("id{i}"),
                value: 6.0,
            })
            .collect();
        let y = |v: f64| 300.0 - v * 30.0;
        let a = jitter_offsets(&scores, y, &st);
        assert_eq!(a, jitter_offsets(&scores, y, &st));
        let half = st.column_width / 2.0;
        assert!(a.iter().all(|d| d.abs() < half));
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), 15, "tied dots get distinct slots");
    }

    #[test]
    fn svg_counts_and_escaping() {
        let mut m = matrix();
        m.insert(
            "a&b",
            "TIPc",
            Metric::TonePhase,
            ScoreEntry {
                response_index: 1,
                eval_index: 1,
                record_id: "x<y".into(),
                value: 4.0,
            },
        );
        let spec = FigureSpec::from_matrix(&m, &[]).unwrap();
        let svg = render_svg(&m, &spec);
        assert_eq!(svg.matches(r#"class="dot""#).count(), m.score_count());
        assert!(svg.contains("a&amp;b") && svg.contains("x&lt;y"));
        assert!(!svg.contains("a&b"));
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let m = ScoreMatrix::default();
        assert!(matches!(
            FigureSpec::from_matrix(&m, &[]),
            Err(ReportError::EmptyMatrix)
        ));
        assert!(matches!(
            render_summary_csv(&m, &[]),
            Err(ReportError::EmptyMatrix)
        ));
        assert!(matches!(
            render_summary_markdown(&m, &[]),
            Err(ReportError::EmptyMatrix)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let m = matrix();
        let csv = render_summary_csv(&m, &[]).unwrap();
        assert!(csv.starts_with(
            "row,evaluator,condition,response,eval,tone_phase,tsundere,record_id,n\n"
        ));
        let table = parse_summary_csv(&csv).unwrap();
        assert_eq!(table.matrix, m);
        let (tone, tsun, n) = table.averages[&("judge".to_string(), "TIPc".to_string())];
        assert_eq!((tone, tsun, n), (Some(4.75), Some(5.25), 4));
    }

    #[test]
    fn csv_parse_errors() {
        assert!(parse_summary_csv("a,b\n").is_err());
        let head = CSV_HEADER.join(",");
        assert!(parse_summary_csv(&format!("{head}\nbogus,,,,,,,,\n")).is_err());
        assert!(parse_summary_csv(&format!("{head}\nscore,j,c,x,1,1,1,id,\n")).is_err());
        assert!(parse_summary_csv(&format!("{head}\np,j,nodivider,,,0.1,0.2,,\n")).is_err());
        assert!(parse_summary_csv(&format!("{head}\nscore,j,c,1,1,inf,1,id,\n")).is_err());
    }
}
