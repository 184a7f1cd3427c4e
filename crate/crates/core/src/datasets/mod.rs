//! Dataset ingestion into canonical records, and few-shot demonstration sampling.

mod bigbench;
mod canonical;
mod nli;
mod sampling;
mod stance;

use std::path::PathBuf;

use thiserror::Error;

pub use bigbench::load_bigbench_task;
pub use canonical::{load_canonical, load_demonstrations, write_jsonl};
pub use nli::{load_nli_pairs, ColumnMap, NliSchema};
pub use sampling::{sample_demonstration_pool, sample_demonstrations, SamplingMode};
pub use stance::load_stance_tsv;

use crate::domain::{DomainError, QuestionInstance, TaskSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: no examples")]
    Empty { path: PathBuf },
    #[error("{path}: example {index} has tied maximum target scores ({labels})")]
    TiedTargets {
        path: PathBuf,
        index: usize,
        labels: String,
    },
    #[error("{path}: example {index}: {message}")]
    BadExample {
        path: PathBuf,
        index: usize,
        message: String,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: unknown label `{value}`")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        value: String,
    },
    #[error("{path}: row {row}: missing explanation")]
    MissingExplanation { path: PathBuf, row: usize },
    #[error("need {requested} demonstrations but the pool has {available}")]
    NotEnoughExamples { requested: usize, available: usize },
    #[error("label `{0}` has no training examples")]
    LabelWithoutExamples(String),
    #[error("demonstration count must be at least 1")]
    ZeroDemos,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Rows that did not become instances, and why.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub excluded: Vec<(usize, String)>,
}

impl LoadReport {
    pub fn exclude(&mut self, row: usize, reason: impl Into<String>) {
        self.excluded.push((row, reason.into()));
    }

    pub fn excluded_count(&self, reason: &str) -> usize {
        self.excluded.iter().filter(|(_, r)| r == reason).count()
    }
}

/// A loaded task with its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTask {
    pub task: TaskSpec,
    pub instances: Vec<QuestionInstance>,
    pub report: LoadReport,
}

impl LoadedTask {
    /// Checks the task spec and every instance against it.
    pub fn validate(&self) -> Result<(), DomainError> {
        self.task.validate()?;
        self.instances.iter().try_for_each(|q| q.validate(&self.task))
    }
}

fn read_text(path: &std::path::Path) -> Result<String, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(String::from_utf8(bytes).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned()))
}

fn file_stem(path: &std::path::Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into())
}
