//! Prompt assembly for every supported strategy.
//!
//! A prompt is an ordered list of text segments joined by
//! [`PromptTemplateSet::separator`]. Ablations remove whole segments and
//! never rewrite the ones that remain, so a knob change is always visible as
//! a segment-level diff.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AnswerFormat, ChatMessage, Demonstration, DomainError, PromptBundle, QuestionInstance,
    Strategy, StrategyKnobs, StructuredResponse, TaskSpec, Utterance,
};

pub const DEFAULT_P1: &str = "First, extract keywords from the question.";
pub const DEFAULT_P2: &str =
    "Then, according to the keywords, construct a scenario for the question in the form of dialogue.";
pub const DEFAULT_P3: &str =
    "Finally, according to the question and conversation, reason and give the final answer.";
pub const DEFAULT_COT_TRIGGER: &str = "Let's think step by step.";
pub const DEFAULT_RECITE_TRIGGER: &str = "First, recite relevant knowledge or passages for the question. Then, according to the recitation, give the final answer.";

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("strategy `{0}` needs at least one demonstration")]
    MissingDemos(Strategy),
    #[error("demonstration {index} has no rationale, which few_shot_cot requires")]
    MissingRationale { index: usize },
    #[error("demonstration {index} has no structured keywords/scenario/reasoning exemplar")]
    MissingStructured { index: usize },
    #[error(
        "disabling both keyword extraction and dialogue simulation degenerates to a direct prompt; request strategy `direct` instead"
    )]
    DegenerateAblation,
    #[error("staged step {step} needs the {component} from the previous step")]
    MissingPrior { step: u8, component: &'static str },
    #[error("staged prompting has steps 1-3, got {0}")]
    InvalidStep(u8),
    #[error("strategy `{strategy}` is built by a different builder")]
    WrongBuilder { strategy: Strategy },
    #[error("invalid knobs for `{strategy}`: {reason}")]
    InvalidKnobs { strategy: Strategy, reason: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("template file {path}: {reason}")]
    TemplateFile { path: String, reason: String },
}

/// Trigger sentences and fixed wording used to assemble prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplateSet {
    /// Keyword-extraction trigger.
    pub p1: String,
    /// Keyword-extraction trigger with a required count; `{n}` is substituted.
    pub p1_counted: String,
    /// Dialogue-simulation trigger.
    pub p2: String,
    /// Dialogue-simulation trigger with a required length; `{turns}` becomes "1 turn" / "N turns".
    pub p2_counted: String,
    /// Final-reasoning trigger.
    pub p3: String,
    pub separator: String,
    /// `{choices}` is replaced by the rendered label or option list.
    pub answer_instruction: String,
    pub cot_trigger: String,
    pub recite_trigger: String,
    pub keywords_header: String,
    pub scenario_header: String,
    pub reasoning_header: String,
    pub answer_prefix: String,
    pub system: Option<String>,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        PromptTemplateSet {
            p1: DEFAULT_P1.into(),
            p1_counted: "First, extract {n} keywords from the question.".into(),
            p2: DEFAULT_P2.into(),
            p2_counted: "Then, according to the keywords, construct a scenario for the question in the form of dialogue with {turns}.".into(),
            p3: DEFAULT_P3.into(),
            separator: "\n\n".into(),
            answer_instruction: "Select from {choices}.".into(),
            cot_trigger: DEFAULT_COT_TRIGGER.into(),
            recite_trigger: DEFAULT_RECITE_TRIGGER.into(),
            keywords_header: "Keywords:".into(),
            scenario_header: "Scenario:".into(),
            reasoning_header: "Reasoning:".into(),
            answer_prefix: "Answer:".into(),
            system: None,
        }
    }
}

/// Partial overrides of a [`PromptTemplateSet`]; unset fields keep their default.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateOverrides {
    pub p1: Option<String>,
    pub p1_counted: Option<String>,
    pub p2: Option<String>,
    pub p2_counted: Option<String>,
    pub p3: Option<String>,
    pub separator: Option<String>,
    pub answer_instruction: Option<String>,
    pub cot_trigger: Option<String>,
    pub recite_trigger: Option<String>,
    pub keywords_header: Option<String>,
    pub scenario_header: Option<String>,
    pub reasoning_header: Option<String>,
    pub answer_prefix: Option<String>,
    pub system: Option<String>,
}

impl TemplateOverrides {
    fn apply(&self, set: &mut PromptTemplateSet) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { set.$field = v.clone(); })*
            };
        }
        take!(
            p1,
            p1_counted,
            p2,
            p2_counted,
            p3,
            separator,
            answer_instruction,
            cot_trigger,
            recite_trigger,
            keywords_header,
            scenario_header,
            reasoning_header,
            answer_prefix
        );
        if self.system.is_some() {
            set.system = self.system.clone();
        }
    }
}

/// Template overrides keyed by strategy name; the `default` section applies to all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateFile(pub BTreeMap<String, TemplateOverrides>);

impl TemplateFile {
    /// Reads a TOML or JSON template file (JSON when the extension is `.json`).
    pub fn load(path: &Path) -> Result<Self, StrategyError> {
        let err = |reason: String| StrategyError::TemplateFile {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: TemplateFile = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        for key in file.0.keys() {
            if key != "default" && Strategy::from_name(key).is_none() {
                return Err(err(format!("unknown strategy section `{key}`")));
            }
        }
        Ok(file)
    }

    pub fn templates_for(&self, strategy: Strategy) -> PromptTemplateSet {
        let mut set = PromptTemplateSet::default();
        if let Some(common) = self.0.get("default") {
            common.apply(&mut set);
        }
        if let Some(specific) = self.0.get(strategy.name()) {
            specific.apply(&mut set);
        }
        set
    }
}

fn join_choices(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [only] => only.clone(),
        [a, b] => format!("{a} or {b}"),
        [init @ .., last] => format!("{}, or {last}", init.join(", ")),
    }
}

impl PromptTemplateSet {
    /// Keyword trigger, honoring `keyword_count`.
    pub fn keyword_trigger(&self, knobs: &StrategyKnobs) -> String {
        match knobs.keyword_count {
            Some(n) => self.p1_counted.replace("{n}", &n.to_string()),
            None => self.p1.clone(),
        }
    }

    /// Dialogue trigger, honoring `turn_count`.
    pub fn dialogue_trigger(&self, knobs: &StrategyKnobs) -> String {
        match knobs.turn_count {
            Some(m) if m.get() == 1 => self.p2_counted.replace("{turns}", "1 turn"),
            Some(m) => self.p2_counted.replace("{turns}", &format!("{m} turns")),
            None => self.p2.clone(),
        }
    }

    /// The format-dependent answer instruction for one question.
    pub fn answer_instruction_for(&self, task: &TaskSpec, q: &QuestionInstance) -> String {
        let choices = match task.answer_format {
            AnswerFormat::OptionLetter if !q.options().is_empty() => q
                .options()
                .iter()
                .map(|o| format!("({}) {}", o.letter(), o.text()))
                .collect::<Vec<_>>()
                .join("; "),
            _ => join_choices(&task.labels),
        };
        self.answer_instruction.replace("{choices}", &choices)
    }

    /// Final trigger followed by the answer instruction, as one segment.
    fn final_trigger(&self, task: &TaskSpec, q: &QuestionInstance) -> String {
        format!("{} {}", self.p3, self.answer_instruction_for(task, q))
    }

    fn render_keywords(&self, keywords: &[String]) -> String {
        format!("{}\n{}.", self.keywords_header, keywords.join(", "))
    }

    fn render_scenario(&self, scenario: &[Utterance]) -> String {
        let mut out = self.scenario_header.clone();
        for u in scenario {
            out.push('\n');
            out.push_str(&u.speaker);
            out.push_str(": ");
            out.push_str(&u.text);
        }
        out
    }

    fn bundle(&self, strategy: Strategy, knobs: &StrategyKnobs, segments: Vec<String>) -> PromptBundle {
        let content = segments
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(&self.separator);
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &self.system {
            messages.push(ChatMessage::system(system.clone()));
        }
        messages.push(ChatMessage::user(content));
        PromptBundle {
            strategy,
            messages,
            knobs: knobs.clone(),
        }
    }
}

fn check_question(q: &QuestionInstance) -> Result<(), StrategyError> {
    if q.question.trim().is_empty() {
        return Err(StrategyError::EmptyQuestion);
    }
    Ok(())
}

fn check_zero_shot(strategy: Strategy, knobs: &StrategyKnobs) -> Result<(), StrategyError> {
    if knobs.demo_count != 0 {
        return Err(StrategyError::InvalidKnobs {
            strategy,
            reason: format!("zero-shot strategy with demo_count = {}", knobs.demo_count),
        });
    }
    if knobs.is_ablation() && !strategy.is_ric() {
        return Err(StrategyError::InvalidKnobs {
            strategy,
            reason: "keyword/dialogue ablations only apply to ric strategies".into(),
        });
    }
    Ok(())
}

fn baseline(
    strategy: Strategy,
    task: &TaskSpec,
    q: &QuestionInstance,
    trigger: Option<&str>,
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    check_question(q)?;
    let mut segments = vec![task.description.clone(), q.question.clone()];
    segments.extend(trigger.map(str::to_string));
    segments.push(templates.answer_instruction_for(task, q));
    Ok(templates.bundle(strategy, &StrategyKnobs::default(), segments))
}

/// Task framing, question and answer instruction; no trigger sentences.
pub fn build_direct(
    task: &TaskSpec,
    q: &QuestionInstance,
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    baseline(Strategy::Direct, task, q, None, templates)
}

pub fn build_zero_shot_cot(
    task: &TaskSpec,
    q: &QuestionInstance,
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    baseline(
        Strategy::ZeroShotCot,
        task,
        q,
        Some(&templates.cot_trigger),
        templates,
    )
}

pub fn build_recite_answer(
    task: &TaskSpec,
    q: &QuestionInstance,
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    baseline(
        Strategy::ReciteAnswer,
        task,
        q,
        Some(&templates.recite_trigger),
        templates,
    )
}

fn few_shot(
    strategy: Strategy,
    task: &TaskSpec,
    q: &QuestionInstance,
    demos: &[Demonstration],
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    check_question(q)?;
    if demos.is_empty() {
        return Err(StrategyError::MissingDemos(strategy));
    }
    let mut segments = vec![task.description.clone()];
    for (index, demo) in demos.iter().enumerate() {
        let question = demo.question.question.trim();
        let gold = &demo.question.gold;
        let block = match strategy {
            Strategy::FewShotCot => {
                let rationale = demo
                    .rationale
                    .as_deref()
                    .map(str::trim)
                    .filter(|r| !r.is_empty())
                    .ok_or(StrategyError::MissingRationale { index })?;
                format!(
                    "{question}\n{} {rationale} The answer is {gold}.",
                    templates.answer_prefix
                )
            }
            _ => format!("{question}\n{} {gold}", templates.answer_prefix),
        };
        segments.push(block);
    }
    segments.push(q.question.clone());
    segments.push(templates.answer_instruction_for(task, q));
    let knobs = StrategyKnobs {
        demo_count: demos.len(),
        ..StrategyKnobs::default()
    };
    Ok(templates.bundle(strategy, &knobs, segments))
}

/// Labeled exemplars followed by the test question.
pub fn build_icl(
    task: &TaskSpec,
    q: &QuestionInstance,
    demos: &[Demonstration],
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    few_shot(Strategy::Icl, task, q, demos, templates)
}

/// Exemplars with rationales followed by the test question.
pub fn build_few_shot_cot(
    task: &TaskSpec,
    q: &QuestionInstance,
    demos: &[Demonstration],
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    few_shot(Strategy::FewShotCot, task, q, demos, templates)
}

fn ric_demo_block(
    demo: &Demonstration,
    structured: &StructuredResponse,
    knobs: &StrategyKnobs,
    templates: &PromptTemplateSet,
) -> String {
    let mut parts = vec![demo.question.question.trim().to_string()];
    if !knobs.disable_keywords {
        parts.push(templates.render_keywords(structured.keywords.as_deref().unwrap_or(&[])));
    }
    if !knobs.disable_dialogue {
        parts.push(templates.render_scenario(structured.scenario.as_deref().unwrap_or(&[])));
    }
    parts.push(format!(
        "{}\n{}",
        templates.reasoning_header,
        structured.reasoning.trim()
    ));
    parts.join("\n")
}

/// All three triggers in one prompt, optionally preceded by structured exemplars.
///
/// `knobs.keyword_count` / `knobs.turn_count` specialize the first two
/// triggers; `disable_keywords` / `disable_dialogue` drop them (and the
/// matching exemplar sections) entirely.
pub fn build_ric_unified(
    task: &TaskSpec,
    q: &QuestionInstance,
    demos: &[Demonstration],
    knobs: &StrategyKnobs,
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    check_question(q)?;
    if knobs.disable_keywords && knobs.disable_dialogue {
        return Err(StrategyError::DegenerateAblation);
    }
    let mut segments = vec![task.description.clone()];
    for (index, demo) in demos.iter().enumerate() {
        let structured = demo
            .structured
            .as_ref()
            .ok_or(StrategyError::MissingStructured { index })?;
        segments.push(ric_demo_block(demo, structured, knobs, templates));
    }
    segments.push(q.question.clone());
    if !knobs.disable_keywords {
        segments.push(templates.keyword_trigger(knobs));
    }
    if !knobs.disable_dialogue {
        segments.push(templates.dialogue_trigger(knobs));
    }
    segments.push(templates.final_trigger(task, q));
    let knobs = StrategyKnobs {
        demo_count: demos.len(),
        ..knobs.clone()
    };
    Ok(templates.bundle(Strategy::RicUnified, &knobs, segments))
}

/// Which staged call to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StagedStep {
    Keywords = 1,
    Dialogue = 2,
    Reasoning = 3,
}

impl StagedStep {
    pub const ALL: [StagedStep; 3] = [StagedStep::Keywords, StagedStep::Dialogue, StagedStep::Reasoning];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for StagedStep {
    type Error = StrategyError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(StagedStep::Keywords),
            2 => Ok(StagedStep::Dialogue),
            3 => Ok(StagedStep::Reasoning),
            other => Err(StrategyError::InvalidStep(other)),
        }
    }
}

/// One call of the three-call pipeline.
///
/// Step 1 sends framing, question and the keyword trigger. Step 2 adds the
/// extracted keywords and the dialogue trigger. Step 3 conditions on the
/// simulated scenario only (the keywords do not reappear).
pub fn build_ric_staged_step(
    step: StagedStep,
    task: &TaskSpec,
    q: &QuestionInstance,
    prior: &StructuredResponse,
    knobs: &StrategyKnobs,
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    check_question(q)?;
    check_zero_shot(Strategy::RicStaged, knobs)?;
    if knobs.is_ablation() {
        return Err(StrategyError::InvalidKnobs {
            strategy: Strategy::RicStaged,
            reason: "ablations are defined on the unified prompt; use ric_unified".into(),
        });
    }
    let mut segments = vec![task.description.clone(), q.question.clone()];
    match step {
        StagedStep::Keywords => segments.push(templates.keyword_trigger(knobs)),
        StagedStep::Dialogue => {
            let keywords = prior
                .keywords
                .as_deref()
                .filter(|k| !k.is_empty())
                .ok_or(StrategyError::MissingPrior {
                    step: 2,
                    component: "keywords",
                })?;
            segments.push(format!(
                "{} {}.",
                templates.keywords_header,
                keywords.join(", ")
            ));
            segments.push(templates.dialogue_trigger(knobs));
        }
        StagedStep::Reasoning => {
            let scenario = prior
                .scenario
                .as_deref()
                .filter(|s| !s.is_empty())
                .ok_or(StrategyError::MissingPrior {
                    step: 3,
                    component: "scenario",
                })?;
            segments.push(templates.render_scenario(scenario));
            segments.push(templates.final_trigger(task, q));
        }
    }
    Ok(templates.bundle(Strategy::RicStaged, knobs, segments))
}

/// Builds the single-call bundle for any strategy except `ric_staged`.
pub fn build_bundle(
    strategy: Strategy,
    task: &TaskSpec,
    q: &QuestionInstance,
    demos: &[Demonstration],
    knobs: &StrategyKnobs,
    templates: &PromptTemplateSet,
) -> Result<PromptBundle, StrategyError> {
    match strategy {
        Strategy::Direct | Strategy::ZeroShotCot | Strategy::ReciteAnswer => {
            check_zero_shot(strategy, knobs)?;
            let mut bundle = match strategy {
                Strategy::Direct => build_direct(task, q, templates),
                Strategy::ZeroShotCot => build_zero_shot_cot(task, q, templates),
                _ => build_recite_answer(task, q, templates),
            }?;
            bundle.knobs = knobs.clone();
            Ok(bundle)
        }
        Strategy::Icl | Strategy::FewShotCot => {
            if knobs.is_ablation() || knobs.keyword_count.is_some() || knobs.turn_count.is_some() {
                return Err(StrategyError::InvalidKnobs {
                    strategy,
                    reason: "keyword/dialogue knobs only apply to ric strategies".into(),
                });
            }
            let mut bundle = few_shot(strategy, task, q, demos, templates)?;
            bundle.knobs = StrategyKnobs {
                demo_count: demos.len(),
                ..knobs.clone()
            };
            Ok(bundle)
        }
        Strategy::RicUnified => build_ric_unified(task, q, demos, knobs, templates),
        Strategy::RicStaged => Err(StrategyError::WrongBuilder { strategy }),
    }
}
