//! Built-in prompt corpus: the seven transition-inducing prompts, the
//! quantifying rubric (TQP1) and the text-comparison prompt (TCP1).
//!
//! Texts are embedded at compile time so every load is byte-identical.
//! User-supplied prompts can be read from a directory of `<id>.txt` files.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Insertion point for the subject response inside a TQP template.
pub const TQP_MARKER: &str = "%% A LLM response to TIP is inserted here";

const TCP_LEAD: &str =
    "Please analyze the similarities and differences between the following two texts:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PromptKind {
    Tip,
    Tqp,
    Tcp,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Tip => "TIP",
            PromptKind::Tqp => "TQP",
            PromptKind::Tcp => "TCP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneAxis {
    Emotional,
    Logical,
    Control,
    Mixed,
    DryLogical,
    None,
}

impl fmt::Display for ToneAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToneAxis::Emotional => "emotional",
            ToneAxis::Logical => "logical",
            ToneAxis::Control => "control",
            ToneAxis::Mixed => "mixed",
            ToneAxis::DryLogical => "dry_logical",
            ToneAxis::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionAxis {
    Fused,
    NonFused,
    NotApplicable,
}

impl fmt::Display for FusionAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionAxis::Fused => "fused",
            FusionAxis::NonFused => "non_fused",
            FusionAxis::NotApplicable => "not_applicable",
        })
    }
}

/// A canonical prompt with its condition tags.
///
/// Declared counts are documentation carried over from the prompt headers;
/// they are `None` for prompts that never declared one (TQP, TCP, user files).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub kind: PromptKind,
    pub tone_axis: ToneAxis,
    pub fusion_axis: FusionAxis,
    pub text: String,
    pub declared_token_count: Option<u32>,
    pub declared_sentence_count: Option<u32>,
}

impl PromptSpec {
    fn builtin(
        id: &str,
        kind: PromptKind,
        tone_axis: ToneAxis,
        fusion_axis: FusionAxis,
        text: &str,
        tokens: Option<u32>,
    ) -> Self {
        PromptSpec {
            id: id.to_string(),
            kind,
            tone_axis,
            fusion_axis,
            text: text.to_string(),
            declared_token_count: tokens,
            declared_sentence_count: (kind == PromptKind::Tip).then_some(3),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("prompt {0} is not a TQP template")]
    NotATqp(String),
    #[error("TQP template {0} has no insertion marker")]
    MarkerMissing(String),
    #[error("TQP template {0} has the insertion marker {1} times")]
    MarkerDuplicated(String, usize),
    #[error("TCP inputs must both be non-empty")]
    EmptyInput,
    #[error("duplicate prompt id {0}")]
    DuplicateId(String),
    #[error("unknown prompt id {0}")]
    UnknownId(String),
    #[error("invalid prompt id {0:?}")]
    InvalidId(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Returns the nine built-in prompts in a fixed order.
pub fn load_builtin_corpus() -> Vec<PromptSpec> {
    use FusionAxis::*;
    use PromptKind::*;
    vec![
        PromptSpec::builtin(
            "TIPe",
            Tip,
            ToneAxis::Emotional,
            Fused,
            include_str!("../corpus/TIPe.txt"),
            Some(50),
        ),
        PromptSpec::builtin(
            "TIPl",
            Tip,
            ToneAxis::Logical,
            Fused,
            include_str!("../corpus/TIPl.txt"),
            Some(50),
        ),
        PromptSpec::builtin(
            "TIPc",
            Tip,
            ToneAxis::Control,
            Fused,
            include_str!("../corpus/TIPc.txt"),
            Some(49),
        ),
        PromptSpec::builtin(
            "TIPc-v1",
            Tip,
            ToneAxis::Mixed,
            Fused,
            include_str!("../corpus/TIPc-v1.txt"),
            Some(49),
        ),
        PromptSpec::builtin(
            "TIPc-v3",
            Tip,
            ToneAxis::DryLogical,
            Fused,
            include_str!("../corpus/TIPc-v3.txt"),
            Some(49),
        ),
        PromptSpec::builtin(
            "TIPn-e",
            Tip,
            ToneAxis::Emotional,
            NonFused,
            include_str!("../corpus/TIPn-e.txt"),
            Some(49),
        ),
        PromptSpec::builtin(
            "TIPn-l",
            Tip,
            ToneAxis::Logical,
            NonFused,
            include_str!("../corpus/TIPn-l.txt"),
            Some(49),
        ),
        PromptSpec::builtin(
            "TQP1",
            Tqp,
            ToneAxis::None,
            NotApplicable,
            include_str!("../corpus/TQP1.txt"),
            None,
        ),
        PromptSpec::builtin(
            "TCP1",
            Tcp,
            ToneAxis::None,
            NotApplicable,
            include_str!("../corpus/TCP1.txt"),
            None,
        ),
    ]
}

/// An immutable, id-indexed set of prompts.
#[derive(Debug, Clone)]
pub struct Corpus {
    prompts: Vec<PromptSpec>,
}

impl Corpus {
    pub fn builtin() -> Self {
        Corpus {
            prompts: load_builtin_corpus(),
        }
    }

    pub fn new(prompts: Vec<PromptSpec>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for p in &prompts {
            if !seen.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
        }
        Ok(Corpus { prompts })
    }

    pub fn get(&self, id: &str) -> Option<&PromptSpec> {
        self.prompts.iter().find(|p| p.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&PromptSpec, CorpusError> {
        self.get(id)
            .ok_or_else(|| CorpusError::UnknownId(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptSpec> {
        self.prompts.iter()
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Writes one `<id>.txt` per prompt. Texts are written byte-for-byte.
    pub fn export(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut written = Vec::with_capacity(self.prompts.len());
        for p in &self.prompts {
            let path = dir.join(format!("{}.txt", p.id));
            fs::write(&path, p.text.as_bytes()).map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Reads every `*.txt` file in `dir` as a user prompt, sorted by id.
///
/// Files whose id matches a built-in prompt inherit its tags; anything else
/// is classified by id prefix (`TQP`, `TCP`, otherwise TIP) with no tags.
pub fn load_prompt_dir(dir: &Path) -> Result<Vec<PromptSpec>, CorpusError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| CorpusError::Io { path, source }
    };
    let builtin = Corpus::builtin();
    let mut specs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        specs.push(load_prompt_file_as(&path, id, &builtin)?);
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(specs)
}

/// Reads a single prompt file; the id is the file stem.
pub fn load_prompt_file(path: &Path) -> Result<PromptSpec, CorpusError> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CorpusError::InvalidId(path.display().to_string()))?;
    load_prompt_file_as(path, id, &Corpus::builtin())
}

fn load_prompt_file_as(path: &Path, id: &str, builtin: &Corpus) -> Result<PromptSpec, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if let Some(known) = builtin.get(id) {
        return Ok(PromptSpec {
            text,
            ..known.clone()
        });
    }
    let kind = if id.starts_with("TQP") {
        PromptKind::Tqp
    } else if id.starts_with("TCP") {
        PromptKind::Tcp
    } else {
        PromptKind::Tip
    };
    Ok(PromptSpec {
        id: id.to_string(),
        kind,
        tone_axis: ToneAxis::None,
        fusion_axis: FusionAxis::NotApplicable,
        text,
        declared_token_count: None,
        declared_sentence_count: None,
    })
}

/// Splices a subject response into a TQP template at its insertion marker.
pub fn instantiate_tqp(tqp: &PromptSpec, tip_response_text: &str) -> Result<String, CorpusError> {
    if tqp.kind != PromptKind::Tqp {
        return Err(CorpusError::NotATqp(tqp.id.clone()));
    }
    match tqp.text.matches(TQP_MARKER).count() {
        0 => Err(CorpusError::MarkerMissing(tqp.id.clone())),
        1 => Ok(tqp.text.replacen(TQP_MARKER, tip_response_text, 1)),
        n => Err(CorpusError::MarkerDuplicated(tqp.id.clone(), n)),
    }
}

/// Frames two texts for structural comparison, labelled `1st:` and `2nd:`.
pub fn instantiate_tcp(first_text: &str, second_text: &str) -> Result<String, CorpusError> {
    if first_text.is_empty() || second_text.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(format!(
        "{TCP_LEAD}\n\n1st: \"{first_text}\"\n\n2nd: \"{second_text}\""
    ))
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Maps text to a token count.
pub trait TokenCounter {
    fn name(&self) -> &str;
    /// Exact counters fail validation on mismatch; approximate ones only warn.
    fn is_exact(&self) -> bool;
    fn count(&self, text: &str) -> io::Result<usize>;
}

/// Whitespace-split approximation. Always available, never exact.
#[derive(Debug, Default, Clone, Copy)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn is_exact(&self) -> bool {
        false
    }

    fn count(&self, text: &str) -> io::Result<usize> {
        Ok(text.split_whitespace().count())
    }
}

/// Delegates to an external tokenizer: the text goes to the program's stdin
/// and its stdout must be a single integer.
#[derive(Debug, Clone)]
pub struct CommandCounter {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandCounter {
    /// Splits a command line on whitespace. No shell quoting is applied.
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(CommandCounter {
            program,
            args: parts.collect(),
        })
    }
}

impl TokenCounter for CommandCounter {
    fn name(&self) -> &str {
        &self.program
    }

    fn is_exact(&self) -> bool {
        true
    }

    fn count(&self, text: &str) -> io::Result<usize> {
        use std::io::Write;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(text.as_bytes())?;
        let out = child.wait_with_output()?;
        if !out.status.success() {
            return Err(io::Error::other(format!(
                "tokenizer exited with {}",
                out.status
            )));
        }
        String::from_utf8_lossy(&out.stdout)
            .trim()
            .parse()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Warn => "WARN",
            CheckStatus::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub prompt_id: String,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn has_failures(&self) -> bool {
        self.checks.iter().any(|c| c.status == CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Counts sentences: runs of `.`, `!` or `?` that end a clause (followed by
/// whitespace or end of text) outside double quotes, plus a trailing
/// unterminated fragment if one exists. Dashes never terminate.
pub fn count_sentences(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut in_quote = false;
    let mut count = 0;
    let mut pending_fragment = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '"' => in_quote = !in_quote,
            '“' => in_quote = true,
            '”' => in_quote = false,
            _ => {}
        }
        if matches!(c, '.' | '!' | '?') && !in_quote {
            let mut j = i;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?') {
                j += 1;
            }
            // closing brackets/quotes may trail the terminator
            let mut k = j;
            while k < chars.len() && matches!(chars[k], ')' | ']' | '\'' | '’' | '”') {
                k += 1;
            }
            if k == chars.len() || chars[k].is_whitespace() {
                count += 1;
                pending_fragment = false;
                i = k;
                continue;
            }
            i = j;
            pending_fragment = true;
            continue;
        }
        if !c.is_whitespace() {
            pending_fragment = true;
        }
        i += 1;
    }
    count + usize::from(pending_fragment)
}

/// Runs every declared-constraint check for `spec`. Never errors: problems
/// become `Fail` or `Warn` entries.
pub fn validate_prompt(spec: &PromptSpec, counter: &dyn TokenCounter) -> ValidationReport {
    let mut checks = Vec::new();
    let empty = spec.text.trim().is_empty();
    checks.push(Check {
        name: "non_empty".into(),
        status: if empty {
            CheckStatus::Fail
        } else {
            CheckStatus::Pass
        },
        detail: format!("{} bytes", spec.text.len()),
    });

    if let Some(declared) = spec.declared_sentence_count {
        let found = count_sentences(&spec.text);
        checks.push(Check {
            name: "sentence_count".into(),
            status: if found == declared as usize {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!("declared {declared}, found {found}"),
        });
    }

    if let Some(declared) = spec.declared_token_count {
        let check = match counter.count(&spec.text) {
            Ok(found) if found == declared as usize => Check {
                name: "token_count".into(),
                status: CheckStatus::Pass,
                detail: format!("declared {declared}, {} counted {found}", counter.name()),
            },
            Ok(found) => Check {
                name: "token_count".into(),
                status: if counter.is_exact() {
                    CheckStatus::Fail
                } else {
                    CheckStatus::Warn
                },
                detail: format!("declared {declared}, {} counted {found}", counter.name()),
            },
            Err(e) => Check {
                name: "token_count".into(),
                status: CheckStatus::Warn,
                detail: format!("counter {} unavailable: {e}", counter.name()),
            },
        };
        checks.push(check);
    }

    if spec.kind == PromptKind::Tip && spec.declared_token_count.is_some() {
        let ok = matches!(spec.declared_token_count, Some(49 | 50));
        checks.push(Check {
            name: "token_budget".into(),
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: "TIP declared token count must be 49 or 50".into(),
        });
    }

    if spec.kind == PromptKind::Tqp {
        let n = spec.text.matches(TQP_MARKER).count();
        checks.push(Check {
            name: "insertion_marker".into(),
            status: if n == 1 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!("marker occurs {n} time(s)"),
        });
    }

    ValidationReport {
        prompt_id: spec.id.clone(),
        checks,
    }
}
