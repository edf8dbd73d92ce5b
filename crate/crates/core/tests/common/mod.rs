#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use phaseprobe::experiment::{ExperimentManifest, Providers};
use phaseprobe::providers::{
    build_backend, BackendError, ChatBackend, ChatReply, ChatRequest, Provider,
};

pub const CONDITIONS: [&str; 3] = ["TIPc", "TIPe", "TIPn-e"];

/// GPT-4o judge grid: [condition][response][eval] = (tone, tsundere).
pub const GPT4O: [[[(f64, f64); 5]; 3]; 3] = [
    [
        [(5.0, 6.7), (5.0, 6.4), (5.0, 6.4), (5.0, 6.5), (6.0, 7.3)],
        [(3.0, 3.7), (2.5, 3.2), (8.0, 8.4), (5.0, 5.7), (3.0, 3.7)],
        [(5.8, 6.7), (5.0, 6.8), (6.0, 6.8), (5.0, 6.8), (5.0, 6.3)],
    ],
    [
        [(6.0, 7.3), (6.0, 7.5), (5.0, 6.8), (6.0, 7.8), (6.0, 6.8)],
        [(5.0, 7.1), (8.0, 8.4), (5.8, 7.2), (6.0, 7.4), (8.0, 8.7)],
        [(6.0, 7.4), (6.0, 7.4), (5.8, 7.4), (6.0, 6.8), (5.8, 7.1)],
    ],
    [
        [(6.0, 7.4), (6.0, 7.8), (6.0, 7.4), (6.0, 7.4), (5.0, 7.4)],
        [(6.0, 7.5), (6.0, 7.4), (6.0, 7.1), (6.0, 6.8), (6.0, 6.7)],
        [(5.8, 7.2), (5.0, 6.7), (6.0, 7.3), (6.0, 7.4), (5.8, 7.5)],
    ],
];

/// Gemini judge grid, one response per condition: [condition][eval].
pub const GEMINI: [[(f64, f64); 5]; 3] = [
    [(8.0, 7.0), (5.0, 5.5), (5.0, 5.5), (8.0, 7.5), (5.0, 2.5)],
    [(8.0, 7.8), (8.0, 7.5), (8.0, 8.5), (8.0, 8.5), (8.0, 7.5)],
    [(8.0, 7.8), (8.0, 8.0), (8.0, 7.8), (8.0, 7.5), (8.0, 7.8)],
];

pub fn gpt4o_column(condition: usize, tsundere: bool) -> Vec<f64> {
    GPT4O[condition]
        .iter()
        .flatten()
        .map(|&(t, d)| if tsundere { d } else { t })
        .collect()
}

pub fn gemini_column(condition: usize, tsundere: bool) -> Vec<f64> {
    GEMINI[condition]
        .iter()
        .map(|&(t, d)| if tsundere { d } else { t })
        .collect()
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Loads a bundled manifest and points its store at `out`.
pub fn manifest(name: &str, out: &Path) -> ExperimentManifest {
    let mut m = ExperimentManifest::load(&fixtures_dir().join(name)).expect("bundled manifest");
    m.output_dir = out.to_path_buf();
    m
}

/// Wraps a backend and keeps every request it sees.
pub struct Recording {
    inner: Arc<dyn ChatBackend>,
    pub requests: Mutex<Vec<ChatRequest>>,
}

impl Recording {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Arc<Self> {
        Arc::new(Recording {
            inner,
            requests: Mutex::new(Vec::new()),
        })
    }
}

impl ChatBackend for Recording {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.send(request)
    }
}

/// Replay providers for a manifest, with the evaluator backends recorded.
pub fn replay_providers(m: &ExperimentManifest) -> (Providers, Vec<Arc<Recording>>) {
    let base = fixtures_dir();
    let subject_backend = build_backend(&m.subject, None, &base).expect("subject fixtures");
    let subject = Provider::new(m.subject.clone(), subject_backend).unwrap();
    let mut recorders = Vec::new();
    let mut evaluators = Vec::new();
    for config in &m.evaluators {
        let rec = Recording::new(build_backend(config, None, &base).expect("evaluator fixtures"));
        recorders.push(rec.clone());
        evaluators.push(Provider::new(config.clone(), rec).unwrap());
    }
    (Providers::new(subject, evaluators), recorders)
}
