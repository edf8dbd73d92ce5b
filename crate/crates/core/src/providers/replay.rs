use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{BackendError, ChatBackend, ChatReply, ChatRequest};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay directory {0} does not exist")]
    DirMissing(PathBuf),
    #[error("no replay fixture for {prompt_id}/{trial_index}.txt")]
    FixtureMissing { prompt_id: String, trial_index: u32 },
    #[error("cannot read replay fixture {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Serves recorded responses from `<prompt_id>/<trial_index>.txt` files.
///
/// All fixtures are read at load time, so lookups are pure.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    root: PathBuf,
    fixtures: BTreeMap<(String, u32), String>,
}

pub fn load_replay_fixtures(dir: &Path) -> Result<ReplayBackend, ReplayError> {
    if !dir.is_dir() {
        return Err(ReplayError::DirMissing(dir.to_path_buf()));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReplayError::Io { path, source }
    };
    let mut fixtures = BTreeMap::new();
    for prompt_dir in fs::read_dir(dir).map_err(io(dir))? {
        let prompt_dir = prompt_dir.map_err(io(dir))?.path();
        if !prompt_dir.is_dir() {
            continue;
        }
        let Some(prompt_id) = prompt_dir.file_name().and_then(|s| s.to_str()) else {
            continue;
        };
        for file in fs::read_dir(&prompt_dir).map_err(io(&prompt_dir))? {
            let path = file.map_err(io(&prompt_dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(trial) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u32>().ok())
            else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(io(&path))?;
            fixtures.insert((prompt_id.to_string(), trial), text);
        }
    }
    Ok(ReplayBackend {
        root: dir.to_path_buf(),
        fixtures,
    })
}

impl ReplayBackend {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    pub fn resolve(&self, prompt_id: &str, trial_index: u32) -> Result<&str, ReplayError> {
        self.fixtures
            .get(&(prompt_id.to_string(), trial_index))
            .map(String::as_str)
            .ok_or_else(|| ReplayError::FixtureMissing {
                prompt_id: prompt_id.to_string(),
                trial_index,
            })
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        self.resolve(request.prompt_id(), request.trial_index())
            .map(|text| ChatReply {
                text: text.to_string(),
            })
            .map_err(|e| BackendError::Fatal(e.to_string()))
    }
}
