//! Synthetic workloads for the pipeline benchmarks.

use std::collections::BTreeMap;

use ric_core::{AnswerFormat, MetricKind, Prediction, QuestionInstance, TaskSpec};

pub fn stance_task() -> TaskSpec {
    TaskSpec {
        id: "stance_bench".into(),
        description: "Stance Detection:".into(),
        labels: vec!["favor".into(), "against".into()],
        aliases: BTreeMap::from([("favour".into(), "favor".into())]),
        answer_format: AnswerFormat::LabelWord,
        metric: MetricKind::MacroF1,
        f1_classes: Some(vec!["favor".into(), "against".into()]),
        option_count: None,
    }
}

/// `n` questions with alternating gold labels.
pub fn questions(task: &TaskSpec, n: usize) -> Vec<QuestionInstance> {
    (0..n)
        .map(|i| QuestionInstance {
            task_id: task.id.clone(),
            question: format!(
                "What is the attitude toward \"Donald Trump\" in the tweet \"Tweet number {i} about the rally tonight #politics\"?"
            ),
            options: None,
            gold: task.labels[i % task.labels.len()].clone(),
        })
        .collect()
}

/// A well-formed structured completion of roughly realistic length.
pub fn completion(i: usize) -> String {
    format!(
        "Keywords:\nrally, tonight, crowd {i}.\n\nScenario:\nSarah: Did you see the rally tonight?\nAmy: I did, the crowd was huge.\nSarah: People seemed thrilled.\nAmy: Not everyone, some were protesting.\n\nReasoning:\nThe tweet sounds enthusiastic about the event. The answer is {}.",
        if i.is_multiple_of(3) { "against" } else { "favor" }
    )
}

/// Predictions where every `k`th one abstains and the rest follow a fixed pattern.
pub fn predictions(task: &TaskSpec, n: usize, k: usize) -> Vec<Prediction> {
    (0..n)
        .map(|i| {
            if k > 0 && i.is_multiple_of(k) {
                Prediction::Abstain
            } else {
                Prediction::Label(task.labels[(i / 2) % task.labels.len()].clone())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workloads_are_well_formed() {
        let task = stance_task();
        task.validate().unwrap();
        let qs = questions(&task, 10);
        assert!(qs.iter().all(|q| task.has_label(&q.gold)));
        assert_eq!(predictions(&task, 10, 5).iter().filter(|p| p.is_abstain()).count(), 2);
        assert!(completion(0).ends_with("against."));
    }
}
