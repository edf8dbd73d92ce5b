//! Manifest-driven protocol execution and score aggregation.

mod aggregate;
mod manifest;
mod runner;
pub mod store;

use std::path::PathBuf;

use thiserror::Error;

pub use aggregate::{
    aggregate, aggregate_store, compare, parse_pair, CellKey, CompareError, Comparison, Exclusions,
    Metric, ScoreCell, ScoreEntry, ScoreMatrix, DEFAULT_PAIRS,
};
pub use manifest::{evaluator_prompt_id, ExperimentManifest};
pub use runner::{run_experiment, Providers, RunOptions, RunSummary, SlotCounts};
pub use store::{StoreEntry, StoreError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),
    #[error("store {0} was started with a different trial design")]
    ManifestMismatch(PathBuf),
    #[error("no provider configured for {0}")]
    MissingProvider(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

impl ExperimentError {
    pub fn is_locked(&self) -> bool {
        matches!(self, ExperimentError::Store(StoreError::Locked(_)))
    }
}
