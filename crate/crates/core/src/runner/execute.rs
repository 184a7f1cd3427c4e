use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use thiserror::Error;

use super::config::{BackendMode, ExperimentConfig, LoaderKind, StrategyEntry, TaskEntry};
use super::{knobs_digest, ModelCall, RecordKey, RunRecord, RunnerError};
use crate::backend::{
    BackendError, ChatBackend, CompletionClient, DiskCache, HttpBackend, MockBackend, ReplayBackend,
};
use crate::datasets::{
    load_bigbench_task, load_canonical, load_demonstrations, load_nli_pairs, load_stance_tsv,
    sample_demonstration_pool, sample_demonstrations, ColumnMap, LoadedTask, SamplingMode,
};
use crate::domain::{
    AnswerFormat, Demonstration, ModelConfig, Prediction, PromptBundle, QuestionInstance, Strategy,
    StrategyKnobs, StructuredResponse, TaskSpec,
};
use crate::parse::{extract_keywords, parse_response, parse_scenario, split_sections};
use crate::strategies::{
    build_bundle, build_ric_staged_step, PromptTemplateSet, StagedStep, StrategyError, TemplateFile,
};

/// A loaded task plus its demonstration sources.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub entry: TaskEntry,
    pub loaded: LoadedTask,
    pub train: Vec<QuestionInstance>,
    pub annotated: Vec<Demonstration>,
}

impl PreparedTask {
    pub fn task(&self) -> &TaskSpec {
        &self.loaded.task
    }

    fn sampling(&self) -> SamplingMode {
        self.entry.sampling.unwrap_or(match self.loaded.task.answer_format {
            // Option texts differ per question, so labels cannot be stratified.
            AnswerFormat::OptionLetter => SamplingMode::Uniform,
            _ => SamplingMode::OnePerLabel,
        })
    }
}

fn load_one(entry: &TaskEntry, path: &Path) -> Result<LoadedTask, RunnerError> {
    Ok(match entry.loader {
        LoaderKind::Bigbench => load_bigbench_task(path)?,
        LoaderKind::Stance => load_stance_tsv(path, entry.target.as_deref().unwrap_or_default())?,
        LoaderKind::Nli => {
            let schema = entry.schema.ok_or_else(|| RunnerError::Invalid {
                field: "schema".into(),
                reason: "nli loader needs a schema".into(),
            })?;
            load_nli_pairs(path, schema, entry.columns.as_ref().unwrap_or(&ColumnMap::default()))?
        }
        LoaderKind::Canonical => {
            let records = entry.records.as_deref().ok_or_else(|| RunnerError::Invalid {
                field: "records".into(),
                reason: "canonical loader needs `records`".into(),
            })?;
            load_canonical(path, records)?
        }
    })
}

/// Loads every configured task with its training pool and annotated demonstrations.
pub fn load_tasks(config: &ExperimentConfig) -> Result<Vec<PreparedTask>, RunnerError> {
    let mut prepared: Vec<PreparedTask> = Vec::with_capacity(config.tasks.len());
    let mut ids = HashSet::new();
    for (i, entry) in config.tasks.iter().enumerate() {
        let mut loaded = load_one(entry, &entry.path)?;
        if let Some(id) = &entry.id {
            loaded.task.id = id.clone();
        }
        if let Some(description) = &entry.description {
            loaded.task.description = description.clone();
        }
        for q in &mut loaded.instances {
            q.task_id = loaded.task.id.clone();
        }
        if let Some(limit) = entry.limit {
            loaded.instances.truncate(limit);
        }
        if !ids.insert(loaded.task.id.clone()) {
            return Err(RunnerError::Invalid {
                field: format!("tasks[{i}]"),
                reason: format!("task id `{}` is used twice; set `id` to disambiguate", loaded.task.id),
            });
        }
        let train = match &entry.train {
            Some(path) => {
                let train = match entry.loader {
                    LoaderKind::Canonical => load_canonical(&entry.path, path)?,
                    _ => load_one(entry, path)?,
                };
                train.instances
            }
            None => Vec::new(),
        };
        let annotated = match &entry.demos {
            Some(path) => load_demonstrations(path, &loaded.task)?,
            None => Vec::new(),
        };
        tracing::info!(
            task = %loaded.task.id,
            instances = loaded.instances.len(),
            excluded = loaded.report.excluded.len(),
            "loaded task"
        );
        prepared.push(PreparedTask {
            entry: entry.clone(),
            loaded,
            train,
            annotated,
        });
    }
    Ok(prepared)
}

/// Test hook for simulating an interrupted run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunControl {
    /// Stop claiming new work after this many questions; the records file is
    /// left as an interrupted run would leave it.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    /// All records in canonical order (task, strategy, question).
    pub records: Vec<RunRecord>,
    pub tasks: Vec<TaskSpec>,
    /// Questions evaluated in this invocation.
    pub executed: usize,
    /// Records carried over from an earlier invocation.
    pub resumed: usize,
    /// Records that ended in a per-question error.
    pub errors: usize,
    pub backend_calls: u64,
    pub cache_hits: u64,
    /// HTTP requests sent; always zero outside live mode.
    pub network_requests: u64,
    pub records_path: PathBuf,
    pub tasks_path: PathBuf,
    /// False when the run was cut short by [`RunControl::stop_after`].
    pub complete: bool,
}

struct Cell {
    entry: StrategyEntry,
    knobs: StrategyKnobs,
    digest: String,
    name: String,
    templates: PromptTemplateSet,
}

#[derive(Clone, Copy)]
struct WorkItem {
    task: usize,
    cell: usize,
    question: usize,
}

#[derive(Debug, Error)]
enum ItemError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

struct Context<'a> {
    tasks: &'a [PreparedTask],
    cells: &'a [Cell],
    /// Demonstrations per `[task][cell]`.
    demos: &'a [Vec<Vec<Demonstration>>],
    client: &'a CompletionClient,
    model: &'a ModelConfig,
}

impl Context<'_> {
    fn first_bundle(&self, item: WorkItem) -> Result<PromptBundle, StrategyError> {
        let prepared = &self.tasks[item.task];
        let cell = &self.cells[item.cell];
        let q = &prepared.loaded.instances[item.question];
        match cell.entry.strategy {
            Strategy::RicStaged => build_ric_staged_step(
                StagedStep::Keywords,
                prepared.task(),
                q,
                &StructuredResponse::default(),
                &cell.knobs,
                &cell.templates,
            ),
            strategy => build_bundle(
                strategy,
                prepared.task(),
                q,
                &self.demos[item.task][item.cell],
                &cell.knobs,
                &cell.templates,
            ),
        }
    }

    fn call(&self, bundle: &PromptBundle, step: Option<u8>, calls: &mut Vec<ModelCall>) -> Result<String, ItemError> {
        let completion = self.client.complete(bundle, self.model)?;
        let text = completion.text.clone();
        calls.push(ModelCall {
            step,
            prompt_digest: CompletionClient::key_for(bundle, self.model),
            completion,
        });
        Ok(text)
    }

    fn respond(&self, item: WorkItem, calls: &mut Vec<ModelCall>) -> Result<StructuredResponse, ItemError> {
        let prepared = &self.tasks[item.task];
        let task = prepared.task();
        let cell = &self.cells[item.cell];
        let q = &prepared.loaded.instances[item.question];
        let options = q.options();
        if cell.entry.strategy != Strategy::RicStaged {
            let bundle = self.first_bundle(item)?;
            let text = self.call(&bundle, None, calls)?;
            return Ok(parse_response(&text, task, options));
        }

        let mut prior = StructuredResponse::default();
        for step in StagedStep::ALL {
            let bundle = build_ric_staged_step(step, task, q, &prior, &cell.knobs, &cell.templates)?;
            let text = self.call(&bundle, Some(step.number()), calls)?;
            let sections = split_sections(&text);
            match step {
                StagedStep::Keywords => {
                    let block = sections.keywords.as_deref().unwrap_or(&text);
                    prior.keywords = Some(extract_keywords(block));
                }
                StagedStep::Dialogue => {
                    let block = sections.scenario.as_deref().unwrap_or(&text);
                    prior.scenario = Some(parse_scenario(block));
                }
                StagedStep::Reasoning => {
                    let last = parse_response(&text, task, options);
                    prior.reasoning = last.reasoning;
                    prior.answer = last.answer;
                }
            }
        }
        Ok(prior)
    }

    fn execute(&self, item: WorkItem) -> RunRecord {
        let prepared = &self.tasks[item.task];
        let cell = &self.cells[item.cell];
        let q = &prepared.loaded.instances[item.question];
        let mut calls = Vec::new();
        let (response, error) = match self.respond(item, &mut calls) {
            Ok(response) => (response, None),
            Err(e) => {
                tracing::warn!(task = %q.task_id, question = item.question, cell = %cell.name, error = %e, "question failed");
                (
                    StructuredResponse {
                        answer: Prediction::Abstain,
                        ..StructuredResponse::default()
                    },
                    Some(e.to_string()),
                )
            }
        };
        RunRecord {
            task_id: prepared.task().id.clone(),
            question_index: item.question,
            gold: q.gold.clone(),
            strategy: cell.entry.strategy,
            knobs: cell.knobs.clone(),
            cell: cell.name.clone(),
            knobs_digest: cell.digest.clone(),
            correct: response.answer.matches(&q.gold),
            wall_time_ms: calls.iter().map(|c| c.completion.latency_ms).sum(),
            calls,
            response,
            error,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn select_demos(prepared: &PreparedTask, cell: &Cell, field: &str) -> Result<Vec<Demonstration>, RunnerError> {
    let d = cell.entry.demo_count;
    if d == 0 {
        return Ok(Vec::new());
    }
    let task = prepared.task();
    let strategy = cell.entry.strategy;
    let needs_annotations = matches!(strategy, Strategy::FewShotCot | Strategy::RicUnified);
    let demos = if !prepared.annotated.is_empty() {
        sample_demonstration_pool(&prepared.annotated, &task.labels, d, cell.knobs.seed, prepared.sampling())?
    } else if needs_annotations {
        return Err(RunnerError::Invalid {
            field: field.to_string(),
            reason: format!("{strategy} exemplars need annotated `demos`"),
        });
    } else {
        sample_demonstrations(&prepared.train, &task.labels, d, cell.knobs.seed, prepared.sampling())?
    };
    for (index, demo) in demos.iter().enumerate() {
        let missing = match strategy {
            Strategy::FewShotCot => demo.rationale.is_none(),
            Strategy::RicUnified => demo.structured.is_none(),
            _ => false,
        };
        if missing {
            return Err(RunnerError::Invalid {
                field: field.to_string(),
                reason: format!("demonstration {index} lacks the annotation {strategy} needs"),
            });
        }
    }
    Ok(demos)
}

fn read_existing(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) => records.push(r),
            // A torn final line is what an interrupted append leaves behind.
            Err(e) if i + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), error = %e, "discarding truncated last record");
            }
            Err(e) => {
                return Err(RunnerError::Records {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

fn write_atomically(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), RunnerError> {
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    let mut out = BufWriter::new(file);
    write(&mut out).map_err(io_err(&tmp))?;
    out.into_inner()
        .map_err(|e| io_err(&tmp)(e.into_error()))?
        .sync_all()
        .map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), RunnerError> {
    write_atomically(path, |out| {
        for r in records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Runs every (task, strategy, question) combination and persists the records.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, RunnerError> {
    run_experiment_with(config, RunControl::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, control: RunControl) -> Result<RunSummary, RunnerError> {
    config.validate()?;
    let tasks = load_tasks(config)?;
    let template_file = match &config.templates {
        Some(path) => TemplateFile::load(path)?,
        None => TemplateFile::default(),
    };
    let cells: Vec<Cell> = config
        .strategies
        .iter()
        .map(|entry| {
            let knobs = entry.knobs(config.seed);
            Cell {
                digest: knobs_digest(entry.strategy, &knobs),
                name: entry.cell_name(),
                templates: template_file.templates_for(entry.strategy),
                entry: entry.clone(),
                knobs,
            }
        })
        .collect();
    let demos: Vec<Vec<Vec<Demonstration>>> = tasks
        .iter()
        .enumerate()
        .map(|(t, prepared)| {
            cells
                .iter()
                .enumerate()
                .map(|(c, cell)| select_demos(prepared, cell, &format!("tasks[{t}] x strategies[{c}]")))
                .collect()
        })
        .collect::<Result<_, _>>()?;

    std::fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let records_path = config.output_dir.join("records.jsonl");
    let tasks_path = config.output_dir.join("tasks.json");

    // Resume: keep finished records, re-run failed ones.
    let mut done: BTreeMap<RecordKey, RunRecord> = BTreeMap::new();
    for record in read_existing(&records_path)? {
        if record.error.is_none() {
            done.insert(record.key(), record);
        }
    }
    let names: BTreeMap<(Strategy, &str), &str> = cells
        .iter()
        .map(|c| ((c.entry.strategy, c.digest.as_str()), c.name.as_str()))
        .collect();
    for record in done.values_mut() {
        if let Some(name) = names.get(&(record.strategy, record.knobs_digest.as_str())) {
            record.cell = name.to_string();
        }
    }

    let mut pending = Vec::new();
    let mut resumed = 0;
    for (t, prepared) in tasks.iter().enumerate() {
        for (c, cell) in cells.iter().enumerate() {
            for question in 0..prepared.loaded.instances.len() {
                let key = (prepared.task().id.clone(), question, cell.entry.strategy, cell.digest.clone());
                if done.contains_key(&key) {
                    resumed += 1;
                } else {
                    pending.push(WorkItem { task: t, cell: c, question });
                }
            }
        }
    }

    let cache = match &config.cache_dir {
        Some(dir) => Some(DiskCache::open(dir).map_err(io_err(dir))?),
        None => None,
    };
    let mut http = None;
    let backend: Box<dyn ChatBackend> = match &config.backend {
        BackendMode::Live => {
            if !config.model.api_key_env.is_empty() && std::env::var_os(&config.model.api_key_env).is_none() {
                return Err(BackendError::MissingApiKey(config.model.api_key_env.clone()).into());
            }
            let h = Arc::new(HttpBackend::new(
                config.retry,
                Duration::from_secs(config.timeout_secs),
            ));
            http = Some(h.clone());
            Box::new(h)
        }
        BackendMode::Mock { script } => Box::new(MockBackend::from_script(script)?),
        BackendMode::Replay => Box::new(ReplayBackend),
    };
    let client = CompletionClient::new(backend, cache);
    let ctx = Context {
        tasks: &tasks,
        cells: &cells,
        demos: &demos,
        client: &client,
        model: &config.model,
    };

    if config.backend == BackendMode::Replay {
        preflight_replay(&ctx, &pending)?;
    }

    // Rewrite the surviving records so a torn tail or stale errors are gone,
    // then append new results as they arrive.
    let kept: Vec<RunRecord> = done.values().cloned().collect();
    write_records(&records_path, &kept)?;
    let limit = control.stop_after.unwrap_or(usize::MAX).min(pending.len());
    let fresh = execute_pending(&ctx, &pending[..limit], config.max_concurrency, &records_path)?;
    let complete = limit == pending.len();

    let executed = fresh.len();
    for record in fresh {
        done.insert(record.key(), record);
    }

    let task_order: BTreeMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.task().id.as_str(), i)).collect();
    let cell_order: BTreeMap<(Strategy, &str), usize> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| ((c.entry.strategy, c.digest.as_str()), i))
        .collect();
    let mut records: Vec<RunRecord> = done.into_values().collect();
    records.sort_by_key(|r| {
        (
            task_order.get(r.task_id.as_str()).copied().unwrap_or(usize::MAX),
            cell_order
                .get(&(r.strategy, r.knobs_digest.as_str()))
                .copied()
                .unwrap_or(usize::MAX),
            r.question_index,
        )
    });

    let task_specs: Vec<TaskSpec> = tasks.iter().map(|t| t.task().clone()).collect();
    if complete {
        write_records(&records_path, &records)?;
        let json = serde_json::to_string_pretty(&task_specs).expect("task specs serialize");
        write_atomically(&tasks_path, |out| {
            out.write_all(json.as_bytes())?;
            out.write_all(b"\n")
        })?;
    }

    Ok(RunSummary {
        errors: records.iter().filter(|r| r.error.is_some()).count(),
        records,
        tasks: task_specs,
        executed,
        resumed,
        backend_calls: client.backend_calls(),
        cache_hits: client.cache_hits(),
        network_requests: http.map_or(0, |h| h.requests_sent()),
        records_path,
        tasks_path,
        complete,
    })
}

fn preflight_replay(ctx: &Context<'_>, pending: &[WorkItem]) -> Result<(), RunnerError> {
    let Some(cache) = ctx.client.cache() else {
        return Err(RunnerError::Invalid {
            field: "cache_dir".into(),
            reason: "replay mode reads completions from the cache".into(),
        });
    };
    let mut missing = 0;
    let mut example = None;
    let mut total = 0;
    for &item in pending {
        // Prompts that cannot be built fail per question anyway.
        let Ok(bundle) = ctx.first_bundle(item) else { continue };
        total += 1;
        let key = CompletionClient::key_for(&bundle, ctx.model);
        if !cache.contains(&key) {
            missing += 1;
            example.get_or_insert(key);
        }
    }
    match example {
        Some(example) => Err(RunnerError::ReplayColdCache { missing, total, example }),
        None => Ok(()),
    }
}

fn execute_pending(
    ctx: &Context<'_>,
    pending: &[WorkItem],
    workers: usize,
    records_path: &Path,
) -> Result<Vec<RunRecord>, RunnerError> {
    let file = OpenOptions::new()
        .append(true)
        .create(true)
        .open(records_path)
        .map_err(io_err(records_path))?;
    let mut out = BufWriter::new(file);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let mut fresh = Vec::with_capacity(pending.len());
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers.min(pending.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&item) = pending.get(i) else { break };
                if tx.send(ctx.execute(item)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for record in rx {
            if write_error.is_none() {
                let line = serde_json::to_string(&record).expect("record serializes");
                if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                    write_error = Some(e);
                }
            }
            fresh.push(record);
        }
    });
    if let Some(e) = write_error {
        return Err(io_err(records_path)(e));
    }
    Ok(fresh)
}
