use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::corpus::{Corpus, PromptKind};
use crate::providers::ProviderConfig;

fn default_tqp_id() -> String {
    "TQP1".to_string()
}

/// Full trial design of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub subject: ProviderConfig,
    pub evaluators: Vec<ProviderConfig>,
    /// TIP prompt ids, in presentation order.
    pub conditions: Vec<String>,
    pub tip_responses_per_condition: u32,
    pub tqp_evals_per_response: u32,
    #[serde(default = "default_tqp_id")]
    pub tqp_id: String,
    pub output_dir: PathBuf,
}

impl ExperimentManifest {
    /// Reads a manifest file. Relative `output_dir` and `replay:` paths are
    /// resolved against the manifest's own directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| {
            ExperimentError::ManifestInvalid(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| ExperimentError::ManifestInvalid(format!("{}: {e}", path.display())))
    }

    /// Decodes manifest JSON, resolving relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, serde_json::Error> {
        let mut manifest: ExperimentManifest = serde_json::from_str(text)?;
        manifest.resolve_paths(base);
        Ok(manifest)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        for config in std::iter::once(&mut self.subject).chain(self.evaluators.iter_mut()) {
            if let Some(dir) = config.replay_dir().filter(|d| d.is_relative()) {
                config.base_url = format!("replay:{}", base.join(dir).display());
            }
        }
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<(), ExperimentError> {
        let invalid = |msg: String| Err(ExperimentError::ManifestInvalid(msg));
        if self.tip_responses_per_condition < 1 {
            return invalid("tip_responses_per_condition must be at least 1".into());
        }
        if self.tqp_evals_per_response < 1 {
            return invalid("tqp_evals_per_response must be at least 1".into());
        }
        if self.conditions.is_empty() {
            return invalid("no conditions listed".into());
        }
        if self.evaluators.is_empty() {
            return invalid("no evaluators listed".into());
        }
        let mut seen = BTreeSet::new();
        for id in &self.conditions {
            match corpus.get(id) {
                None => return invalid(format!("condition {id} is not in the corpus")),
                Some(p) if p.kind != PromptKind::Tip => {
                    return invalid(format!("condition {id} is a {} prompt, not a TIP", p.kind))
                }
                Some(_) => {}
            }
            if !seen.insert(id) {
                return invalid(format!("condition {id} listed twice"));
            }
        }
        match corpus.get(&self.tqp_id) {
            Some(p) if p.kind == PromptKind::Tqp => {}
            _ => return invalid(format!("tqp_id {} does not name a TQP prompt", self.tqp_id)),
        }
        let mut ids = BTreeSet::new();
        for config in std::iter::once(&self.subject).chain(&self.evaluators) {
            config
                .validate()
                .map_err(|e| ExperimentError::ManifestInvalid(e.to_string()))?;
            if !ids.insert(&config.provider_id) {
                return invalid(format!("provider id {} used twice", config.provider_id));
            }
        }
        Ok(())
    }

    /// Whether `other` describes the same trial grid (providers may differ in
    /// endpoint or credentials, not in identity or counts).
    pub fn same_design(&self, other: &ExperimentManifest) -> bool {
        let ids = |m: &ExperimentManifest| {
            m.evaluators
                .iter()
                .map(|e| e.provider_id.clone())
                .collect::<Vec<_>>()
        };
        self.subject.provider_id == other.subject.provider_id
            && ids(self) == ids(other)
            && self.conditions == other.conditions
            && self.tip_responses_per_condition == other.tip_responses_per_condition
            && self.tqp_evals_per_response == other.tqp_evals_per_response
            && self.tqp_id == other.tqp_id
    }

    pub fn evaluator_prompt_id(&self, condition: &str, response_index: u32) -> String {
        evaluator_prompt_id(&self.tqp_id, condition, response_index)
    }
}

/// Replay key of an evaluator session: `<tqp>_<condition>_r<response>`.
pub fn evaluator_prompt_id(tqp_id: &str, condition: &str, response_index: u32) -> String {
    format!("{tqp_id}_{condition}_r{response_index}")
}
