use std::collections::HashSet;
use std::num::NonZeroU32;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::backend::RetryPolicy;
use crate::datasets::{ColumnMap, NliSchema, SamplingMode};
use crate::domain::{ModelConfig, Strategy, StrategyKnobs};

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BackendMode {
    /// OpenAI-compatible HTTP endpoint.
    Live,
    /// Scripted responses from a rule file.
    Mock { script: PathBuf },
    /// Cache only; any miss is an error.
    #[default]
    Replay,
}

impl BackendMode {
    pub fn name(&self) -> &'static str {
        match self {
            BackendMode::Live => "live",
            BackendMode::Mock { .. } => "mock",
            BackendMode::Replay => "replay",
        }
    }

    /// Parses a command-line override: `live`, `replay`, `mock` (keeping the
    /// configured script) or `mock:<path>`.
    pub fn parse_override(value: &str, current: &BackendMode) -> Result<BackendMode, RunnerError> {
        let invalid = |reason: String| RunnerError::Invalid {
            field: "backend".into(),
            reason,
        };
        match value {
            "live" => Ok(BackendMode::Live),
            "replay" => Ok(BackendMode::Replay),
            "mock" => match current {
                BackendMode::Mock { script } => Ok(BackendMode::Mock { script: script.clone() }),
                _ => Err(invalid("`mock` needs a script; use mock:<path>".into())),
            },
            other => match other.strip_prefix("mock:") {
                Some(path) if !path.is_empty() => Ok(BackendMode::Mock { script: path.into() }),
                _ => Err(invalid(format!("unknown backend `{other}` (expected live, replay or mock:<path>)"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoaderKind {
    Bigbench,
    Stance,
    Nli,
    /// Task spec JSON (`path`) plus instance JSONL (`records`).
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub loader: LoaderKind,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<NliSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<ColumnMap>,
    /// Unannotated demonstration pool, in the same format as `path`
    /// (instance JSONL for the canonical loader).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Annotated demonstrations (JSONL) with rationales and/or structured responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingMode>,
    /// Evaluate only the first N questions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub strategy: Strategy,
    /// Row name in reports; derived from the strategy and knobs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword_count: Option<NonZeroU32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_count: Option<NonZeroU32>,
    #[serde(default)]
    pub demo_count: usize,
    #[serde(default)]
    pub disable_keywords: bool,
    #[serde(default)]
    pub disable_dialogue: bool,
    /// Overrides the experiment seed for demonstration sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl StrategyEntry {
    pub fn new(strategy: Strategy) -> Self {
        StrategyEntry {
            strategy,
            label: None,
            keyword_count: None,
            turn_count: None,
            demo_count: 0,
            disable_keywords: false,
            disable_dialogue: false,
            seed: None,
        }
    }

    pub fn knobs(&self, experiment_seed: u64) -> StrategyKnobs {
        StrategyKnobs {
            keyword_count: self.keyword_count,
            turn_count: self.turn_count,
            demo_count: self.demo_count,
            disable_keywords: self.disable_keywords,
            disable_dialogue: self.disable_dialogue,
            seed: self.seed.unwrap_or(experiment_seed),
        }
    }

    /// Report row name, e.g. `ric_unified`, `ric_unified (keywords=3)`, `icl (demos=3)`.
    pub fn cell_name(&self) -> String {
        if let Some(label) = &self.label {
            return label.clone();
        }
        let mut parts = Vec::new();
        if let Some(k) = self.keyword_count {
            parts.push(format!("keywords={k}"));
        }
        if let Some(t) = self.turn_count {
            parts.push(format!("turns={t}"));
        }
        if self.demo_count > 0 {
            parts.push(format!("demos={}", self.demo_count));
        }
        if self.disable_keywords {
            parts.push("no keywords".into());
        }
        if self.disable_dialogue {
            parts.push("no dialogue".into());
        }
        if parts.is_empty() {
            self.strategy.name().to_string()
        } else {
            format!("{} ({})", self.strategy.name(), parts.join(", "))
        }
    }

    fn check(&self) -> Result<(), String> {
        let ric_knobs = self.keyword_count.is_some()
            || self.turn_count.is_some()
            || self.disable_keywords
            || self.disable_dialogue;
        match self.strategy {
            Strategy::Direct | Strategy::ZeroShotCot | Strategy::ReciteAnswer => {
                if self.demo_count > 0 || ric_knobs {
                    return Err("zero-shot baselines take no knobs".into());
                }
            }
            Strategy::Icl | Strategy::FewShotCot => {
                if self.demo_count == 0 {
                    return Err("demo_count must be at least 1".into());
                }
                if ric_knobs {
                    return Err("keyword/dialogue knobs only apply to ric strategies".into());
                }
            }
            Strategy::RicUnified => {
                if self.disable_keywords && self.disable_dialogue {
                    return Err("disabling both keywords and dialogue leaves the direct prompt; use `direct`".into());
                }
            }
            Strategy::RicStaged => {
                if self.demo_count > 0 {
                    return Err("staged prompting is zero-shot".into());
                }
                if self.disable_keywords || self.disable_dialogue {
                    return Err("ablations are defined on ric_unified".into());
                }
            }
        }
        Ok(())
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_concurrency() -> usize {
    1
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskEntry>,
    pub strategies: Vec<StrategyEntry>,
    pub model: ModelConfig,
    #[serde(default)]
    pub backend: BackendMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub seed: u64,
    /// Prompt template overrides (TOML or JSON).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl ExperimentConfig {
    /// Reads a TOML (or `.json`) config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| RunnerError::Config {
            path: path.to_path_buf(),
            message,
        };
        let mut config: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for task in &mut self.tasks {
            fix(&mut task.path);
            for p in [&mut task.records, &mut task.train, &mut task.demos].into_iter().flatten() {
                fix(p);
            }
        }
        if let BackendMode::Mock { script } = &mut self.backend {
            fix(script);
        }
        for p in [&mut self.cache_dir, &mut self.templates].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Semantic checks that need no file access beyond existence.
    pub fn validate(&self) -> Result<(), RunnerError> {
        let invalid = |field: &str, reason: String| RunnerError::Invalid {
            field: field.to_string(),
            reason,
        };
        if self.max_concurrency == 0 {
            return Err(invalid("max_concurrency", "must be at least 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(invalid("tasks", "at least one task is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(invalid("strategies", "at least one strategy is required".into()));
        }
        self.model
            .validate()
            .map_err(|e| invalid("model", e.to_string()))?;
        if self.backend == BackendMode::Replay && self.cache_dir.is_none() {
            return Err(invalid("cache_dir", "replay mode reads completions from the cache".into()));
        }
        if let BackendMode::Mock { script } = &self.backend {
            require_file("backend.script", script)?;
        }
        if let Some(t) = &self.templates {
            require_file("templates", t)?;
        }

        let mut cells = HashSet::new();
        let mut keys = HashSet::new();
        for (i, entry) in self.strategies.iter().enumerate() {
            let field = format!("strategies[{i}]");
            entry.check().map_err(|r| invalid(&field, format!("{}: {r}", entry.strategy)))?;
            if !cells.insert(entry.cell_name()) {
                return Err(invalid(&field, format!("duplicate row name `{}`", entry.cell_name())));
            }
            if !keys.insert((entry.strategy, entry.knobs(self.seed))) {
                return Err(invalid(&field, "duplicates an earlier strategy and knob combination".into()));
            }
        }

        let needs_demos = self.strategies.iter().any(|s| s.demo_count > 0);
        let mut ids = HashSet::new();
        for (i, task) in self.tasks.iter().enumerate() {
            let field = format!("tasks[{i}]");
            require_file(&format!("{field}.path"), &task.path)?;
            for (name, p) in [("records", &task.records), ("train", &task.train), ("demos", &task.demos)] {
                if let Some(p) = p {
                    require_file(&format!("{field}.{name}"), p)?;
                }
            }
            match task.loader {
                LoaderKind::Stance if task.target.is_none() => {
                    return Err(invalid(&field, "stance loader needs `target`".into()))
                }
                LoaderKind::Nli if task.schema.is_none() => {
                    return Err(invalid(&field, "nli loader needs `schema`".into()))
                }
                LoaderKind::Canonical if task.records.is_none() => {
                    return Err(invalid(&field, "canonical loader needs `records`".into()))
                }
                _ => {}
            }
            if task.columns.is_some() && task.loader != LoaderKind::Nli {
                return Err(invalid(&field, "`columns` only applies to the nli loader".into()));
            }
            if needs_demos && task.train.is_none() && task.demos.is_none() {
                return Err(invalid(&field, "few-shot strategies need `train` or `demos`".into()));
            }
            if let Some(id) = &task.id {
                if !ids.insert(id.clone()) {
                    return Err(invalid(&field, format!("duplicate task id `{id}`")));
                }
            }
        }
        Ok(())
    }
}

fn require_file(field: &str, path: &Path) -> Result<(), RunnerError> {
    if path.exists() {
        Ok(())
    } else {
        Err(RunnerError::Invalid {
            field: field.to_string(),
            reason: format!("{} does not exist", path.display()),
        })
    }
}
