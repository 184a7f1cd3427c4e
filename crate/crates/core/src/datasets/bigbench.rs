use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{file_stem, read_text, DatasetError, LoadReport, LoadedTask};
use crate::domain::{fold, AnswerFormat, AnswerOption, MetricKind, QuestionInstance, TaskSpec};

#[derive(Deserialize)]
struct TaskFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    task_prefix: Option<String>,
    #[serde(default)]
    examples: Vec<Example>,
}

#[derive(Deserialize)]
struct Example {
    input: String,
    #[serde(default)]
    target_scores: Option<serde_json::Map<String, Value>>,
}

/// Loads a BIG-bench multiple-choice task file.
///
/// Gold is the unique top-scoring key of `target_scores`. When every example
/// offers the same keys they become the label set directly; otherwise each
/// question gets lettered options and the label set is the union of option
/// texts in order of first appearance.
pub fn load_bigbench_task(path: &Path) -> Result<LoadedTask, DatasetError> {
    let text = read_text(path)?;
    let file: TaskFile = serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if file.examples.is_empty() {
        return Err(DatasetError::Empty {
            path: path.to_path_buf(),
        });
    }
    let id = file.name.clone().unwrap_or_else(|| file_stem(path));

    let mut parsed = Vec::with_capacity(file.examples.len());
    for (index, example) in file.examples.iter().enumerate() {
        let bad = |message: String| DatasetError::BadExample {
            path: path.to_path_buf(),
            index,
            message,
        };
        let scores = example
            .target_scores
            .as_ref()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("no target_scores".into()))?;
        let mut keys = Vec::with_capacity(scores.len());
        let mut best = f64::NEG_INFINITY;
        let mut winners: Vec<&str> = Vec::new();
        for (key, value) in scores {
            let score = value
                .as_f64()
                .ok_or_else(|| bad(format!("target score for `{key}` is not a number")))?;
            keys.push(key.clone());
            if score > best {
                best = score;
                winners.clear();
                winners.push(key);
            } else if score == best {
                winners.push(key);
            }
        }
        if winners.len() > 1 {
            return Err(DatasetError::TiedTargets {
                path: path.to_path_buf(),
                index,
                labels: winners.join(", "),
            });
        }
        parsed.push((example.input.trim().to_string(), keys, winners[0].to_string()));
    }

    let shared_keys = parsed.windows(2).all(|w| {
        let mut a: Vec<&String> = w[0].1.iter().collect();
        let mut b: Vec<&String> = w[1].1.iter().collect();
        a.sort();
        b.sort();
        a == b
    });

    let mut labels: Vec<String> = Vec::new();
    for (_, keys, _) in &parsed {
        for key in keys {
            if !labels.contains(key) {
                labels.push(key.clone());
            }
        }
    }

    let answer_format = if !shared_keys {
        AnswerFormat::OptionLetter
    } else if labels.len() == 2 && labels.iter().all(|l| matches!(fold(l).as_str(), "true" | "false")) {
        AnswerFormat::Boolean
    } else {
        AnswerFormat::LabelWord
    };

    let option_count = (answer_format == AnswerFormat::OptionLetter)
        .then(|| parsed.iter().map(|(_, keys, _)| keys.len()).max().unwrap_or(0));

    let instances = parsed
        .into_iter()
        .map(|(question, keys, gold)| QuestionInstance {
            task_id: id.clone(),
            question,
            options: (answer_format == AnswerFormat::OptionLetter).then(|| {
                keys.into_iter()
                    .enumerate()
                    .map(|(i, k)| AnswerOption::new(option_letter(i), k))
                    .collect()
            }),
            gold,
        })
        .collect::<Vec<_>>();

    let description = file
        .task_prefix
        .filter(|p| !p.trim().is_empty())
        .or(file.description)
        .unwrap_or_else(|| id.clone())
        .trim()
        .to_string();

    let loaded = LoadedTask {
        task: TaskSpec {
            id,
            description,
            labels,
            aliases: BTreeMap::new(),
            answer_format,
            metric: MetricKind::Accuracy,
            f1_classes: None,
            option_count,
        },
        report: LoadReport {
            rows: instances.len(),
            excluded: Vec::new(),
        },
        instances,
    };
    loaded.validate()?;
    Ok(loaded)
}

fn option_letter(index: usize) -> String {
    let letter = (b'a' + (index % 26) as u8) as char;
    if index < 26 {
        letter.to_string()
    } else {
        format!("{letter}{}", index / 26)
    }
}
