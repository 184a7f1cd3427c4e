use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{read_text, DatasetError, LoadReport, LoadedTask};
use crate::domain::{AnswerFormat, Demonstration, QuestionInstance, TaskSpec};

fn parse_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| DatasetError::Json {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Loads a task spec JSON document and its JSONL instance file.
pub fn load_canonical(task_path: &Path, records_path: &Path) -> Result<LoadedTask, DatasetError> {
    let task: TaskSpec = serde_json::from_str(&read_text(task_path)?).map_err(|e| DatasetError::Json {
        path: task_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let instances: Vec<QuestionInstance> = parse_jsonl(records_path)?;
    let loaded = LoadedTask {
        task,
        report: LoadReport {
            rows: instances.len(),
            excluded: Vec::new(),
        },
        instances,
    };
    loaded.validate()?;
    Ok(loaded)
}

/// Loads annotated demonstrations (one JSON object per line).
///
/// Golds are checked against the task labels, except for option-letter tasks
/// where each demonstration only needs its gold among its own options.
pub fn load_demonstrations(path: &Path, task: &TaskSpec) -> Result<Vec<Demonstration>, DatasetError> {
    let demos: Vec<Demonstration> = parse_jsonl(path)?;
    for (index, demo) in demos.iter().enumerate() {
        let q = &demo.question;
        if task.answer_format == AnswerFormat::OptionLetter {
            if !q.options().iter().any(|o| o.text() == q.gold) {
                return Err(DatasetError::BadExample {
                    path: path.to_path_buf(),
                    index,
                    message: format!("gold `{}` is not one of the options", q.gold),
                });
            }
        } else {
            q.validate(task)?;
        }
    }
    Ok(demos)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
