use std::collections::BTreeMap;
use std::path::Path;

use super::{read_text, DatasetError, LoadReport, LoadedTask};
use crate::domain::{fold, AnswerFormat, MetricKind, QuestionInstance, TaskSpec};

pub(super) fn header_index(
    headers: &csv::StringRecord,
    name: &str,
    path: &Path,
) -> Result<usize, DatasetError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| DatasetError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

pub(super) fn csv_error(path: &Path, e: csv::Error) -> DatasetError {
    DatasetError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads a SemEval-style stance TSV (`Target`, `Tweet`, `Stance` columns),
/// keeping rows for `target`. Rows labelled NONE and rows for other targets
/// are excluded and recorded in the load report.
pub fn load_stance_tsv(path: &Path, target: &str) -> Result<LoadedTask, DatasetError> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let target_col = header_index(&headers, "Target", path)?;
    let tweet_col = header_index(&headers, "Tweet", path)?;
    let stance_col = header_index(&headers, "Stance", path)?;

    let id = format!("stance_{}", fold(target).replace(' ', "_"));
    let mut report = LoadReport::default();
    let mut instances = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        report.rows += 1;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        if !field(target_col).eq_ignore_ascii_case(target.trim()) {
            report.exclude(row, "other target");
            continue;
        }
        let gold = match fold(field(stance_col)).as_str() {
            "favor" | "favour" => "favor",
            "against" => "against",
            "none" => {
                report.exclude(row, "none");
                continue;
            }
            _ => {
                return Err(DatasetError::UnknownLabel {
                    path: path.to_path_buf(),
                    row,
                    value: field(stance_col).to_string(),
                })
            }
        };
        instances.push(QuestionInstance {
            task_id: id.clone(),
            question: format!(
                "What is the attitude toward \"{}\" in the tweet \"{}\"?",
                target.trim(),
                field(tweet_col)
            ),
            options: None,
            gold: gold.to_string(),
        });
    }
    if report.excluded_count("none") > 0 {
        tracing::info!(
            path = %path.display(),
            dropped = report.excluded_count("none"),
            "dropped stance rows labelled NONE"
        );
    }

    let loaded = LoadedTask {
        task: TaskSpec {
            id,
            description: "Stance Detection:".into(),
            labels: vec!["favor".into(), "against".into()],
            aliases: BTreeMap::from([("favour".to_string(), "favor".to_string())]),
            answer_format: AnswerFormat::LabelWord,
            metric: MetricKind::MacroF1,
            f1_classes: Some(vec!["favor".into(), "against".into()]),
            option_count: None,
        },
        instances,
        report,
    };
    loaded.validate()?;
    Ok(loaded)
}
