//! Scoring functions and analytic baselines.
//!
//! All scores are percentages in `[0, 100]` carried as `f64`; rounding to two
//! decimals happens only when a report is rendered.

use thiserror::Error;

use crate::domain::{MetricKind, Prediction, TaskSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("{preds} predictions but {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("cannot score an empty set")]
    Empty,
    #[error("no classes to average F1 over")]
    NoClasses,
}

fn check_lengths(preds: usize, golds: usize) -> Result<(), MetricError> {
    if preds != golds {
        return Err(MetricError::LengthMismatch { preds, golds });
    }
    Ok(())
}

/// Percentage of exact matches; abstentions never match.
pub fn accuracy<G: AsRef<str>>(preds: &[Prediction], golds: &[G]) -> Result<f64, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    let correct = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.matches(g.as_ref()))
        .count();
    Ok(100.0 * correct as f64 / golds.len() as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 from confusion counts, with 0/0 taken as 0.
pub fn class_f1<G: AsRef<str>>(preds: &[Prediction], golds: &[G], class: &str) -> f64 {
    let mut tp = 0;
    let mut predicted = 0;
    let mut actual = 0;
    for (p, g) in preds.iter().zip(golds) {
        let is_pred = p.matches(class);
        let is_gold = g.as_ref() == class;
        predicted += usize::from(is_pred);
        actual += usize::from(is_gold);
        tp += usize::from(is_pred && is_gold);
    }
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean per-class F1 over `classes`, as a percentage.
pub fn macro_f1<G: AsRef<str>, C: AsRef<str>>(
    preds: &[Prediction],
    golds: &[G],
    classes: &[C],
) -> Result<f64, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    if classes.is_empty() {
        return Err(MetricError::NoClasses);
    }
    let sum: f64 = classes
        .iter()
        .map(|c| class_f1(preds, golds, c.as_ref()))
        .sum();
    Ok(100.0 * sum / classes.len() as f64)
}

/// Scores predictions under the task's metric.
pub fn score<G: AsRef<str>>(task: &TaskSpec, preds: &[Prediction], golds: &[G]) -> Result<f64, MetricError> {
    match task.metric {
        MetricKind::Accuracy => accuracy(preds, golds),
        MetricKind::MacroF1 => {
            if golds.is_empty() {
                return Err(MetricError::Empty);
            }
            macro_f1(preds, golds, task.f1_class_set())
        }
    }
}

/// Expected score of a uniform guesser: `100 / choices` for both metric kinds.
pub fn expected_random_score(task: &TaskSpec) -> f64 {
    100.0 / task.choice_count().max(1) as f64
}

/// Score of always predicting the most frequent gold label (ties go to the
/// earlier label in task order).
pub fn majority_score<G: AsRef<str>>(golds: &[G], task: &TaskSpec) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut best: Option<(&str, usize)> = None;
    for label in &task.labels {
        let count = golds.iter().filter(|g| g.as_ref() == label).count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    let modal = best.map(|(l, _)| l.to_string()).unwrap_or_default();
    let preds = vec![Prediction::Label(modal); golds.len()];
    score(task, &preds, golds)
}

/// Unweighted mean of per-task scores.
pub fn aggregate<S: AsRef<str>>(per_task: &[(S, f64)]) -> Result<f64, MetricError> {
    if per_task.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(per_task.iter().map(|(_, s)| s).sum::<f64>() / per_task.len() as f64)
}

/// Two-decimal rendering used by every report.
pub fn format_score(score: f64) -> String {
    format!("{score:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::*;

    fn p(labels: &[&str]) -> Vec<Prediction> {
        labels.iter().map(|l| Prediction::Label(l.to_string())).collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(format_score(accuracy(&p(&["T", "F", "T"]), &["T", "T", "T"]).unwrap()), "66.67");
        assert_eq!(accuracy(&p(&["T", "F"]), &["T", "F"]).unwrap(), 100.0);
        assert_eq!(accuracy(&[Prediction::Abstain], &["T"]).unwrap(), 0.0);
        assert_eq!(accuracy(&p(&["T"]), &["T", "F"]), Err(MetricError::LengthMismatch { preds: 1, golds: 2 }));
        assert_eq!(accuracy::<&str>(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn macro_f1_examples() {
        // favor: tp=2, fp=0, fn=1 -> P=1, R=2/3, F1=0.8; against: no tp -> 0.
        let score = macro_f1(
            &p(&["favor", "against", "favor"]),
            &["favor", "favor", "favor"],
            &["favor", "against"],
        )
        .unwrap();
        assert!((score - 40.0).abs() < 1e-9);
        let perfect = macro_f1(&p(&["favor", "against"]), &["favor", "against"], &["favor", "against"]).unwrap();
        assert_eq!(perfect, 100.0);
        assert_eq!(class_f1(&p(&["a"]), &["a"], "zzz"), 0.0);
        assert!(macro_f1(&p(&["a"]), &["a"], &[] as &[&str]).is_err());
    }

    #[test]
    fn random_scores() {
        assert_eq!(format_score(expected_random_score(&metaphor_task())), "50.00");
        let mut seq = metaphor_task();
        seq.labels = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        assert_eq!(format_score(expected_random_score(&seq)), "25.00");
        assert_eq!(format_score(expected_random_score(&pronoun_task())), "33.33");
    }

    #[test]
    fn majority_examples() {
        let task = metaphor_task();
        assert_eq!(format_score(majority_score(&["True", "True", "False"], &task).unwrap()), "66.67");
        assert_eq!(majority_score(&["False", "True"], &task).unwrap(), 50.0);
        assert_eq!(majority_score::<&str>(&[], &task), Err(MetricError::Empty));
        // Single-class golds under two-class F1: the modal class scores 100, the other 0.
        let stance = stance_task();
        assert_eq!(majority_score(&["against", "against"], &stance).unwrap(), 50.0);
    }

    #[test]
    fn majority_outside_f1_classes_scores_zero() {
        let mut stance = stance_task();
        stance.labels.push("none".into());
        let golds = ["none", "none", "none", "favor"];
        assert_eq!(majority_score(&golds, &stance).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[("a", 50.0), ("b", 25.0)]).unwrap(), 37.5);
        assert_eq!(aggregate(&[("a", 61.62)]).unwrap(), 61.62);
        assert_eq!(aggregate::<&str>(&[]), Err(MetricError::Empty));
    }
}
