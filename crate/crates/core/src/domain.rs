//! Domain types shared by every other module, plus label canonicalization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::num::NonZeroU32;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("task `{task}` has no labels")]
    NoLabels { task: String },
    #[error("task `{task}` lists label `{label}` more than once")]
    DuplicateLabel { task: String, label: String },
    #[error("task `{task}`: alias `{alias}` maps to `{target}`, which is not a label")]
    DanglingAlias {
        task: String,
        alias: String,
        target: String,
    },
    #[error("task `{task}`: f1 class `{class}` is not a label")]
    UnknownF1Class { task: String, class: String },
    #[error("gold label `{gold}` is not a label of task `{task}`")]
    GoldNotInLabels { task: String, gold: String },
    #[error("question for option-letter task `{task}` has no options")]
    MissingOptions { task: String },
    #[error("question for task `{task}` repeats option letter `{letter}`")]
    DuplicateOptionLetter { task: String, letter: String },
    #[error("temperature must be a finite value >= 0, got {0}")]
    InvalidTemperature(f64),
    #[error("max_tokens must be positive")]
    ZeroMaxTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    Boolean,
    OptionLetter,
    LabelWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    MacroF1,
}

impl MetricKind {
    /// Column annotation used in report tables.
    pub fn short_name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "Acc.",
            MetricKind::MacroF1 => "F1",
        }
    }
}

/// A subjective task: framing text, label space and scoring convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    /// Task framing placed before every question.
    pub description: String,
    pub labels: Vec<String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    pub answer_format: AnswerFormat,
    pub metric: MetricKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_classes: Option<Vec<String>>,
    /// Choices offered per question when the label set is a union of
    /// per-question option texts (option-letter tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_count: Option<usize>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.labels.is_empty() {
            return Err(DomainError::NoLabels {
                task: self.id.clone(),
            });
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            if !seen.insert(label.as_str()) {
                return Err(DomainError::DuplicateLabel {
                    task: self.id.clone(),
                    label: label.clone(),
                });
            }
        }
        for (alias, target) in &self.aliases {
            if !seen.contains(target.as_str()) {
                return Err(DomainError::DanglingAlias {
                    task: self.id.clone(),
                    alias: alias.clone(),
                    target: target.clone(),
                });
            }
        }
        if let Some(classes) = &self.f1_classes {
            for class in classes {
                if !seen.contains(class.as_str()) {
                    return Err(DomainError::UnknownF1Class {
                        task: self.id.clone(),
                        class: class.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// Classes over which F1 is averaged: the configured subset, else every label.
    pub fn f1_class_set(&self) -> &[String] {
        self.f1_classes.as_deref().unwrap_or(&self.labels)
    }

    /// Number of choices a uniform guesser picks from.
    pub fn choice_count(&self) -> usize {
        self.option_count.unwrap_or(self.labels.len())
    }
}

/// One lettered choice of a multiple-choice question, serialized as `[letter, text]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerOption(pub String, pub String);

impl AnswerOption {
    pub fn new(letter: impl Into<String>, text: impl Into<String>) -> Self {
        AnswerOption(letter.into(), text.into())
    }

    pub fn letter(&self) -> &str {
        &self.0
    }

    pub fn text(&self) -> &str {
        &self.1
    }
}

/// One test item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub task_id: String,
    pub question: String,
    #[serde(default)]
    pub options: Option<Vec<AnswerOption>>,
    pub gold: String,
}

impl QuestionInstance {
    pub fn options(&self) -> &[AnswerOption] {
        self.options.as_deref().unwrap_or(&[])
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<(), DomainError> {
        if !task.has_label(&self.gold) {
            return Err(DomainError::GoldNotInLabels {
                task: task.id.clone(),
                gold: self.gold.clone(),
            });
        }
        if task.answer_format == AnswerFormat::OptionLetter {
            let options = self.options();
            if options.is_empty() {
                return Err(DomainError::MissingOptions {
                    task: task.id.clone(),
                });
            }
            let mut letters = HashSet::new();
            for option in options {
                if !letters.insert(fold(option.letter())) {
                    return Err(DomainError::DuplicateOptionLetter {
                        task: task.id.clone(),
                        letter: option.letter().to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A solved exemplar placed before the test question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: QuestionInstance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredResponse>,
}

impl From<QuestionInstance> for Demonstration {
    fn from(question: QuestionInstance) -> Self {
        Demonstration {
            question,
            rationale: None,
            structured: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Direct,
    ZeroShotCot,
    ReciteAnswer,
    Icl,
    FewShotCot,
    RicUnified,
    RicStaged,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Direct,
        Strategy::ZeroShotCot,
        Strategy::ReciteAnswer,
        Strategy::Icl,
        Strategy::FewShotCot,
        Strategy::RicUnified,
        Strategy::RicStaged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::ZeroShotCot => "zero_shot_cot",
            Strategy::ReciteAnswer => "recite_answer",
            Strategy::Icl => "icl",
            Strategy::FewShotCot => "few_shot_cot",
            Strategy::RicUnified => "ric_unified",
            Strategy::RicStaged => "ric_staged",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn is_ric(self) -> bool {
        matches!(self, Strategy::RicUnified | Strategy::RicStaged)
    }

    /// Strategies that never see demonstrations.
    pub fn is_zero_shot(self) -> bool {
        matches!(
            self,
            Strategy::Direct | Strategy::ZeroShotCot | Strategy::ReciteAnswer | Strategy::RicStaged
        )
    }

    pub fn requires_demos(self) -> bool {
        matches!(self, Strategy::Icl | Strategy::FewShotCot)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyKnobs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_count: Option<NonZeroU32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_count: Option<NonZeroU32>,
    pub demo_count: usize,
    pub disable_keywords: bool,
    pub disable_dialogue: bool,
    pub seed: u64,
}

impl StrategyKnobs {
    pub fn is_ablation(&self) -> bool {
        self.disable_keywords || self.disable_dialogue
    }
}

/// Ordered chat messages produced by a strategy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub strategy: Strategy,
    pub messages: Vec<ChatMessage>,
    pub knobs: StrategyKnobs,
}

impl PromptBundle {
    /// Content of the final user message.
    pub fn user_text(&self) -> &str {
        self.messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default()
    }

    pub fn is_well_formed(&self) -> bool {
        matches!(self.messages.last(), Some(m) if m.role == Role::User)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Utterance {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// An extracted answer: a canonical label, or the abstention sentinel.
///
/// Serialized as the label string, or `null` for an abstention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Prediction {
    Label(String),
    #[default]
    Abstain,
}

impl Prediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Label(l) => Some(l),
            Prediction::Abstain => None,
        }
    }

    pub fn is_abstain(&self) -> bool {
        matches!(self, Prediction::Abstain)
    }

    pub fn matches(&self, gold: &str) -> bool {
        self.label() == Some(gold)
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Label(l) => f.write_str(l),
            Prediction::Abstain => f.write_str("ABSTAIN"),
        }
    }
}

impl From<Option<String>> for Prediction {
    fn from(value: Option<String>) -> Self {
        value.map_or(Prediction::Abstain, Prediction::Label)
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.label().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Option::<String>::deserialize(deserializer)?.into())
    }
}

/// A completion decomposed into keywords, scenario, reasoning and answer.
///
/// `None` sections were absent from the completion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StructuredResponse {
    #[serde(default)]
    pub keywords: Option<Vec<String>>,
    #[serde(default)]
    pub scenario: Option<Vec<Utterance>>,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default)]
    pub answer: Prediction,
}

fn default_max_tokens() -> u32 {
    512
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_name: String,
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Environment variable holding the bearer token; empty disables auth.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

impl ModelConfig {
    pub fn new(model_name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        ModelConfig {
            model_name: model_name.into(),
            endpoint: endpoint.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            api_key_env: default_api_key_env(),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(DomainError::InvalidTemperature(self.temperature));
        }
        if self.max_tokens == 0 {
            return Err(DomainError::ZeroMaxTokens);
        }
        Ok(())
    }
}

const EDGE_PUNCTUATION: &[char] = &[
    '.', ',', '!', '?', '(', ')', '"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '*',
];

/// Lowercases and strips surrounding whitespace and edge punctuation.
pub fn fold(raw: &str) -> String {
    raw.trim_matches(|c: char| c.is_whitespace() || EDGE_PUNCTUATION.contains(&c))
        .to_lowercase()
}

/// Maps a surface form onto a canonical label of `task`.
///
/// Matches labels first, then aliases, then the option letters (and option
/// texts) of `options`. Total: returns `None` when nothing matches.
pub fn canonicalize_label(raw: &str, task: &TaskSpec, options: &[AnswerOption]) -> Option<String> {
    let folded = fold(raw);
    if folded.is_empty() {
        return None;
    }
    if let Some(label) = task.labels.iter().find(|l| fold(l) == folded) {
        return Some(label.clone());
    }
    if let Some(target) = task
        .aliases
        .iter()
        .find(|(alias, _)| fold(alias) == folded)
        .map(|(_, target)| target)
    {
        return task.has_label(target).then(|| target.clone());
    }
    let option = options
        .iter()
        .find(|o| fold(o.letter()) == folded)
        .or_else(|| options.iter().find(|o| fold(o.text()) == folded))?;
    let by_text = fold(option.text());
    task.labels.iter().find(|l| fold(l) == by_text).cloned()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn metaphor_task() -> TaskSpec {
        TaskSpec {
            id: "metaphor".into(),
            description: "Metaphor Recognition:".into(),
            labels: vec!["True".into(), "False".into()],
            aliases: BTreeMap::new(),
            answer_format: AnswerFormat::Boolean,
            metric: MetricKind::Accuracy,
            f1_classes: None,
            option_count: None,
        }
    }

    pub fn stance_task() -> TaskSpec {
        TaskSpec {
            id: "semeval".into(),
            description: "Stance Detection:".into(),
            labels: vec!["favor".into(), "against".into()],
            aliases: [("favour".to_string(), "favor".to_string())]
                .into_iter()
                .collect(),
            answer_format: AnswerFormat::LabelWord,
            metric: MetricKind::MacroF1,
            f1_classes: Some(vec!["favor".into(), "against".into()]),
            option_count: None,
        }
    }

    pub fn pronoun_task() -> TaskSpec {
        TaskSpec {
            id: "pronoun".into(),
            description: "Pronoun Resolution:".into(),
            labels: vec![
                "Alex could not meet".into(),
                "We could not meet".into(),
                "Ambiguous".into(),
            ],
            aliases: BTreeMap::new(),
            answer_format: AnswerFormat::OptionLetter,
            metric: MetricKind::Accuracy,
            f1_classes: None,
            option_count: Some(3),
        }
    }

    pub fn pronoun_options() -> Vec<AnswerOption> {
        vec![
            AnswerOption::new("a", "Alex could not meet"),
            AnswerOption::new("b", "We could not meet"),
            AnswerOption::new("c", "Ambiguous"),
        ]
    }
}
