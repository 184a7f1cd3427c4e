use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stance::{csv_error, header_index};
use super::{file_stem, read_text, DatasetError, LoadReport, LoadedTask};
use crate::domain::{fold, AnswerFormat, MetricKind, QuestionInstance, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliSchema {
    Socnorm,
    ESocnorm,
    Cali,
}

impl NliSchema {
    pub fn name(self) -> &'static str {
        match self {
            NliSchema::Socnorm => "socnorm",
            NliSchema::ESocnorm => "e_socnorm",
            NliSchema::Cali => "cali",
        }
    }

    fn metric(self) -> MetricKind {
        match self {
            NliSchema::Socnorm | NliSchema::ESocnorm => MetricKind::MacroF1,
            NliSchema::Cali => MetricKind::Accuracy,
        }
    }

    fn description(self) -> &'static str {
        match self {
            NliSchema::Socnorm | NliSchema::ESocnorm => "Social Norm Inference:",
            NliSchema::Cali => "Cultural Understanding:",
        }
    }
}

/// Column names and extra label spellings for an NLI file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
    pub explanation: String,
    /// Raw label value (case-insensitive) to one of entailment/contradiction/neutral.
    pub label_map: BTreeMap<String, String>,
    /// Field delimiter; inferred from the extension when absent.
    pub delimiter: Option<char>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            premise: "premise".into(),
            hypothesis: "hypothesis".into(),
            label: "label".into(),
            explanation: "explanation".into(),
            label_map: BTreeMap::new(),
            delimiter: None,
        }
    }
}

const LABELS: [&str; 3] = ["entailment", "contradiction", "neutral"];

fn builtin_label(folded: &str) -> Option<&'static str> {
    Some(match folded {
        "entailment" | "entail" | "entails" | "e" => "entailment",
        "contradiction" | "contradict" | "contradicts" | "c" => "contradiction",
        "neutral" | "no relation" | "no-relation" | "none" | "n" => "neutral",
        _ => return None,
    })
}

/// Loads premise/hypothesis pairs into a three-way entailment task.
pub fn load_nli_pairs(path: &Path, schema: NliSchema, columns: &ColumnMap) -> Result<LoadedTask, DatasetError> {
    let text = read_text(path)?;
    let delimiter = columns.delimiter.unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => '\t',
            _ => ',',
        }
    });
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let premise_col = header_index(&headers, &columns.premise, path)?;
    let hypothesis_col = header_index(&headers, &columns.hypothesis, path)?;
    let label_col = header_index(&headers, &columns.label, path)?;
    let explanation_col = match schema {
        NliSchema::ESocnorm => Some(header_index(&headers, &columns.explanation, path)?),
        _ => None,
    };
    let overrides: BTreeMap<String, String> = columns
        .label_map
        .iter()
        .map(|(k, v)| (fold(k), v.clone()))
        .collect();

    let id = file_stem(path);
    let mut report = LoadReport::default();
    let mut instances = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        report.rows += 1;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let raw_label = field(label_col);
        let folded = fold(raw_label);
        let gold = overrides
            .get(&folded)
            .map(|v| fold(v))
            .or_else(|| builtin_label(&folded).map(str::to_string))
            .filter(|l| LABELS.contains(&l.as_str()))
            .ok_or_else(|| DatasetError::UnknownLabel {
                path: path.to_path_buf(),
                row,
                value: raw_label.to_string(),
            })?;
        let mut question = format!(
            "Does the sentence \"{}\" entail, contradict, or has no relation to the sentence \"{}\"?",
            field(premise_col),
            field(hypothesis_col)
        );
        if let Some(col) = explanation_col {
            let explanation = field(col);
            if explanation.is_empty() {
                return Err(DatasetError::MissingExplanation {
                    path: path.to_path_buf(),
                    row,
                });
            }
            question.push_str("\nExplanation: ");
            question.push_str(explanation);
        }
        instances.push(QuestionInstance {
            task_id: id.clone(),
            question,
            options: None,
            gold,
        });
    }

    let aliases = [
        ("entail", "entailment"),
        ("entails", "entailment"),
        ("contradict", "contradiction"),
        ("contradicts", "contradiction"),
        ("no relation", "neutral"),
        ("has no relation", "neutral"),
    ]
    .into_iter()
    .map(|(a, l)| (a.to_string(), l.to_string()))
    .collect();

    let loaded = LoadedTask {
        task: TaskSpec {
            id,
            description: schema.description().into(),
            labels: LABELS.iter().map(|l| l.to_string()).collect(),
            aliases,
            answer_format: AnswerFormat::LabelWord,
            metric: schema.metric(),
            f1_classes: None,
            option_count: None,
        },
        instances,
        report,
    };
    loaded.validate()?;
    Ok(loaded)
}
