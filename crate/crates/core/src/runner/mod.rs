//! Experiment orchestration: config, execution, persisted records and reports.

mod config;
mod execute;
mod report;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{BackendMode, ExperimentConfig, LoaderKind, StrategyEntry, TaskEntry};
pub use execute::{load_tasks, run_experiment, run_experiment_with, PreparedTask, RunControl, RunSummary};
pub use report::{emit_report, read_records, read_tasks, stats, CellStats, Report, ReportOptions};

use crate::backend::{BackendError, CacheKey, RawCompletion};
use crate::datasets::DatasetError;
use crate::domain::{Strategy, StrategyKnobs, StructuredResponse};
use crate::metrics::MetricError;
use crate::strategies::StrategyError;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Records {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("replay cache is missing {missing} of {total} first-call completions (e.g. {example})")]
    ReplayColdCache {
        missing: usize,
        total: usize,
        example: CacheKey,
    },
    #[error("no records to report")]
    NoRecords,
    #[error("records reference task `{0}` but no task spec was supplied for it")]
    UnknownTask(String),
}

/// One backend round trip within a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCall {
    /// Staged pipeline step (1..=3); absent for single-call strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u8>,
    pub prompt_digest: CacheKey,
    pub completion: RawCompletion,
}

/// Outcome of one (question, strategy, knobs) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub question_index: usize,
    pub gold: String,
    pub strategy: Strategy,
    pub knobs: StrategyKnobs,
    /// Report row this record belongs to.
    pub cell: String,
    pub knobs_digest: String,
    pub calls: Vec<ModelCall>,
    pub response: StructuredResponse,
    pub correct: bool,
    /// Sum of backend latencies over the calls.
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Resume key: `(task_id, question_index, strategy, knobs_digest)`.
pub type RecordKey = (String, usize, Strategy, String);

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        (
            self.task_id.clone(),
            self.question_index,
            self.strategy,
            self.knobs_digest.clone(),
        )
    }
}

/// Short stable digest of a strategy and its knobs.
pub fn knobs_digest(strategy: Strategy, knobs: &StrategyKnobs) -> String {
    let json = serde_json::to_vec(&(strategy, knobs)).expect("knobs serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}

#[cfg(test)]
mod tests {
    use std::num::NonZeroU32;

    use super::*;

    #[test]
    fn digest_tracks_knobs() {
        let base = StrategyKnobs::default();
        let d = knobs_digest(Strategy::RicUnified, &base);
        assert_eq!(d.len(), 16);
        assert_eq!(d, knobs_digest(Strategy::RicUnified, &base.clone()));
        assert_ne!(d, knobs_digest(Strategy::RicStaged, &base));
        let k3 = StrategyKnobs {
            keyword_count: NonZeroU32::new(3),
            ..base.clone()
        };
        assert_ne!(d, knobs_digest(Strategy::RicUnified, &k3));
        let seeded = StrategyKnobs { seed: 1, ..base };
        assert_ne!(d, knobs_digest(Strategy::RicUnified, &seeded));
    }
}
