use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{RunRecord, RunnerError};
use crate::backend::{usage_totals, UsageTotals};
use crate::domain::{Prediction, TaskSpec};
use crate::metrics::{aggregate, expected_random_score, format_score, majority_score, score};
use crate::parse::{corpus_statistics, CorpusStatistics};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Prepend analytic Random and Majority rows.
    pub baselines: bool,
}

/// Rendered report documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub markdown: String,
    pub scores_csv: String,
    pub analysis_csv: String,
}

impl Report {
    /// Writes `report.md`, `scores.csv` and `analysis.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
        std::fs::create_dir_all(dir).map_err(|source| RunnerError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::new();
        for (name, body) in [
            ("report.md", &self.markdown),
            ("scores.csv", &self.scores_csv),
            ("analysis.csv", &self.analysis_csv),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| RunnerError::Io {
                path: path.clone(),
                source,
            })?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Reads a records file, failing on any malformed line.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| RunnerError::Records {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads the `tasks.json` written next to the records.
pub fn read_tasks(path: &Path) -> Result<Vec<TaskSpec>, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Ordered distinct values by first appearance.
fn first_seen<'a>(values: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

type Groups<'a> = BTreeMap<(&'a str, &'a str), Vec<&'a RunRecord>>;

fn group(records: &[RunRecord]) -> Groups<'_> {
    let mut groups: Groups<'_> = BTreeMap::new();
    for r in records {
        groups.entry((r.cell.as_str(), r.task_id.as_str())).or_default().push(r);
    }
    groups
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("csv output is UTF-8")
}

fn markdown_table(out: &mut String, header: &[String], align_left: usize, rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let rule: Vec<&str> = (0..header.len())
        .map(|i| if i < align_left { "---" } else { "---:" })
        .collect();
    let _ = writeln!(out, "| {} |", rule.join(" | "));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
}

fn opt(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), format_score)
}

/// Keyword, turn, token and abstention statistics for one (row, task) group.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub cell: String,
    pub task_id: String,
    pub corpus: CorpusStatistics,
    pub usage: UsageTotals,
    pub errors: usize,
}

/// Per (row, task) statistics in first-appearance order.
pub fn stats(records: &[RunRecord]) -> Vec<CellStats> {
    let groups = group(records);
    let mut out = Vec::new();
    for cell in first_seen(records.iter().map(|r| r.cell.as_str())) {
        for task in first_seen(records.iter().map(|r| r.task_id.as_str())) {
            let Some(members) = groups.get(&(cell, task)) else { continue };
            let owned: Vec<RunRecord> = members.iter().map(|r| (*r).clone()).collect();
            out.push(CellStats {
                cell: cell.to_string(),
                task_id: task.to_string(),
                corpus: corpus_statistics(members.iter().map(|r| &r.response)),
                usage: usage_totals(&owned),
                errors: members.iter().filter(|r| r.error.is_some()).count(),
            });
        }
    }
    out
}

/// Renders the score table (rows = methods, columns = tasks, plus the
/// unweighted average) and the analysis table.
pub fn emit_report(records: &[RunRecord], tasks: &[TaskSpec], options: ReportOptions) -> Result<Report, RunnerError> {
    if records.is_empty() {
        return Err(RunnerError::NoRecords);
    }
    let task_ids = first_seen(records.iter().map(|r| r.task_id.as_str()));
    let specs: Vec<&TaskSpec> = task_ids
        .iter()
        .map(|id| {
            tasks
                .iter()
                .find(|t| t.id == *id)
                .ok_or_else(|| RunnerError::UnknownTask(id.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let cells = first_seen(records.iter().map(|r| r.cell.as_str()));
    let groups = group(records);

    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    if options.baselines {
        let mut golds_by_task = Vec::new();
        for spec in &specs {
            let golds: BTreeMap<usize, &str> = records
                .iter()
                .filter(|r| r.task_id == spec.id)
                .map(|r| (r.question_index, r.gold.as_str()))
                .collect();
            golds_by_task.push(golds.into_values().collect::<Vec<_>>());
        }
        rows.push((
            "Random".into(),
            specs.iter().map(|s| Some(expected_random_score(s))).collect(),
        ));
        rows.push((
            "Majority".into(),
            specs
                .iter()
                .zip(&golds_by_task)
                .map(|(s, g)| majority_score(g, s).map(Some))
                .collect::<Result<_, _>>()?,
        ));
    }
    for cell in &cells {
        let mut scores = Vec::with_capacity(specs.len());
        for spec in &specs {
            scores.push(match groups.get(&(*cell, spec.id.as_str())) {
                Some(members) => {
                    let preds: Vec<Prediction> = members.iter().map(|r| r.response.answer.clone()).collect();
                    let golds: Vec<&str> = members.iter().map(|r| r.gold.as_str()).collect();
                    Some(score(spec, &preds, &golds)?)
                }
                None => None,
            });
        }
        rows.push((cell.to_string(), scores));
    }

    let mut header = vec!["Method".to_string()];
    header.extend(specs.iter().map(|s| format!("{} ({})", s.id, s.metric.short_name())));
    header.push("Avg.".into());
    let mut score_rows = Vec::new();
    for (name, scores) in &rows {
        let avg = if scores.iter().all(Option::is_some) {
            let pairs: Vec<(&str, f64)> = specs.iter().zip(scores).map(|(s, v)| (s.id.as_str(), v.unwrap_or(0.0))).collect();
            Some(aggregate(&pairs)?)
        } else {
            None
        };
        let mut row = vec![name.clone()];
        row.extend(scores.iter().copied().map(opt));
        row.push(opt(avg));
        score_rows.push(row);
    }

    let analysis_header: Vec<String> = ["Method", "Task", "Keywords", "Turns", "Tokens", "Abstain %"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut analysis_rows = Vec::new();
    let mut analysis_csv_rows = vec![[
        "method",
        "task",
        "responses",
        "keywords",
        "turns",
        "tokens",
        "tokens_approximate",
        "abstain_pct",
        "errors",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    let cell_stats = stats(records);
    for s in &cell_stats {
        let abstain = s.corpus.abstain_rate.map(|r| 100.0 * r);
        let tokens = format_score(s.usage.mean_completion_tokens);
        analysis_rows.push(vec![
            s.cell.clone(),
            s.task_id.clone(),
            opt(s.corpus.mean_keyword_count),
            opt(s.corpus.mean_turn_count),
            if s.usage.is_approximate() { format!("~{tokens}") } else { tokens.clone() },
            opt(abstain),
        ]);
        analysis_csv_rows.push(vec![
            s.cell.clone(),
            s.task_id.clone(),
            s.corpus.responses.to_string(),
            opt(s.corpus.mean_keyword_count),
            opt(s.corpus.mean_turn_count),
            tokens,
            s.usage.is_approximate().to_string(),
            opt(abstain),
            s.errors.to_string(),
        ]);
    }

    let mut markdown = String::from("## Scores\n\n");
    markdown_table(&mut markdown, &header, 1, &score_rows);
    markdown.push_str("\n## Analysis\n\n");
    markdown_table(&mut markdown, &analysis_header, 2, &analysis_rows);
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    if errors > 0 {
        let _ = writeln!(markdown, "\n{errors} of {} records failed and are scored as abstentions.", records.len());
    }
    if cell_stats.iter().any(|s| s.usage.is_approximate()) {
        markdown.push_str("\nTokens marked ~ include whitespace-count estimates where the endpoint reported no usage.\n");
    }

    let mut csv_header = vec!["method".to_string()];
    csv_header.extend(specs.iter().map(|s| s.id.clone()));
    csv_header.push("avg".into());
    let mut csv_rows = vec![csv_header];
    csv_rows.extend(score_rows);

    Ok(Report {
        markdown,
        scores_csv: csv_string(csv_rows),
        analysis_csv: csv_string(analysis_csv_rows),
    })
}
