//! Prompting strategies, response parsing and evaluation for subjective
//! reasoning tasks, with a cached chat-completion backend and an experiment
//! runner.

pub mod backend;
pub mod datasets;
pub mod domain;
pub mod metrics;
pub mod parse;
pub mod runner;
pub mod strategies;

pub use domain::{
    canonicalize_label, fold, AnswerFormat, AnswerOption, ChatMessage, Demonstration, DomainError,
    MetricKind, ModelConfig, Prediction, PromptBundle, QuestionInstance, Role, Strategy,
    StrategyKnobs, StructuredResponse, TaskSpec, Utterance,
};
