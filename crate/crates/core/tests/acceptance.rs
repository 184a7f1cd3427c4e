//! Acceptance suite. Runs as a plain binary so every criterion prints a
//! PASS/FAIL line; exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ric_core::backend::{CompletionClient, HttpBackend, RetryPolicy};
use ric_core::datasets::{
    load_bigbench_task, load_nli_pairs, load_stance_tsv, sample_demonstrations, ColumnMap, NliSchema,
    SamplingMode,
};
use ric_core::metrics::{aggregate, expected_random_score, format_score, macro_f1, majority_score, accuracy};
use ric_core::parse::{corpus_statistics, count_dialogue_turns, parse_response};
use ric_core::runner::{emit_report, run_experiment, ReportOptions};
use ric_core::strategies::{build_ric_unified, PromptTemplateSet, DEFAULT_P1, DEFAULT_P2, DEFAULT_P3};
use ric_core::{
    AnswerFormat, MetricKind, ModelConfig, Prediction, QuestionInstance, StrategyKnobs, TaskSpec,
};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn task_with(id: &str, labels: usize, metric: MetricKind) -> TaskSpec {
    TaskSpec {
        id: id.into(),
        description: String::new(),
        labels: (0..labels).map(|i| format!("l{i}")).collect(),
        aliases: BTreeMap::new(),
        answer_format: AnswerFormat::LabelWord,
        metric,
        f1_classes: None,
        option_count: None,
    }
}

fn random_row() -> Outcome {
    use MetricKind::{Accuracy as A, MacroF1 as F};
    // Label counts per task, in table column order.
    let tasks = [
        ("metaphor", 2, A, "50.00"),
        ("snarks", 2, A, "50.00"),
        ("humor", 2, A, "50.00"),
        ("pronoun", 3, A, "33.33"),
        ("anachronisms", 2, A, "50.00"),
        ("seq", 4, A, "25.00"),
        ("semeval", 2, F, "50.00"),
        ("socnorm", 3, F, "33.33"),
        ("e_socnorm", 3, F, "33.33"),
        ("cali", 3, A, "33.33"),
        ("entailment", 2, A, "50.00"),
        ("ipa", 3, A, "33.33"),
    ];
    let mut per_task = Vec::new();
    for (id, labels, metric, expected) in tasks {
        let score = expected_random_score(&task_with(id, labels, metric));
        ensure(format_score(score) == expected, format!("{id}: {} != {expected}", format_score(score)))?;
        per_task.push((id, score));
    }
    let avg = aggregate(&per_task).map_err(|e| e.to_string())?;
    ensure((avg - 40.97).abs() <= 0.005, format!("average {avg} not within 0.005 of 40.97"))?;
    Ok(format!("average {avg:.4} (target 40.97 +/- 0.005)"))
}

fn metaphor() -> (TaskSpec, Vec<QuestionInstance>) {
    let loaded = load_bigbench_task(&fixture("metaphor.json")).expect("metaphor fixture");
    (loaded.task, loaded.instances)
}

fn golden_prompt() -> Outcome {
    let (task, questions) = metaphor();
    ensure(questions[0].question == METAPHOR_QUESTION, "fixture question drifted")?;
    let bundle = build_ric_unified(&task, &questions[0], &[], &StrategyKnobs::default(), &PromptTemplateSet::default())
        .map_err(|e| e.to_string())?;
    let golden = read(&fixture("golden/metaphor_unified.txt"));
    ensure(bundle.messages.len() == 1, "expected a single user message")?;
    ensure(bundle.user_text() == golden, format!("prompt differs from golden:\n{}", bundle.user_text()))?;
    for trigger in [DEFAULT_P1, DEFAULT_P2, DEFAULT_P3] {
        ensure(golden.contains(trigger), format!("golden lacks `{trigger}`"))?;
    }
    Ok(format!("{} bytes identical", golden.len()))
}

fn golden_parse() -> Outcome {
    let (task, _) = metaphor();
    let response = parse_response(GOLDEN_RESPONSE, &task, &[]);
    let keywords = response.keywords.clone().unwrap_or_default();
    ensure(keywords == ["Joseph", "heart of a lion", "kind"], format!("keywords {keywords:?}"))?;
    let scenario = response.scenario.clone().unwrap_or_default();
    ensure(scenario.len() == 3, format!("{} utterances", scenario.len()))?;
    let turns = count_dialogue_turns(&scenario);
    ensure(turns == 1, format!("{turns} turns"))?;
    ensure(response.answer == Prediction::Label("True".into()), format!("answer {}", response.answer))?;
    let stats = corpus_statistics([&response]);
    ensure(stats.abstain_rate == Some(0.0), "abstention recorded")?;
    Ok("keywords [Joseph; heart of a lion; kind], 3 utterances, 1 turn, answer True, 0 abstentions".into())
}

/// Accuracy and macro F1 read off a brute-force confusion matrix, with
/// F1 computed as `2tp / (predicted + actual)`.
#[allow(clippy::needless_range_loop)]
fn oracle(preds: &[Prediction], golds: &[String], classes: &[String]) -> (f64, f64) {
    let labels: Vec<Option<&str>> = classes.iter().map(|c| Some(c.as_str())).chain([None]).collect();
    let mut matrix = vec![vec![0u64; labels.len()]; labels.len()];
    let index = |x: Option<&str>| labels.iter().position(|l| *l == x).unwrap_or(labels.len() - 1);
    for (p, g) in preds.iter().zip(golds) {
        matrix[index(Some(g.as_str()))][index(p.label())] += 1;
    }
    let n = preds.len() as u64;
    let correct: u64 = (0..labels.len() - 1).map(|i| matrix[i][i]).sum();
    let mut f1_sum = 0.0;
    for i in 0..classes.len() {
        let tp = matrix[i][i];
        let predicted: u64 = (0..labels.len()).map(|g| matrix[g][i]).sum();
        let actual: u64 = matrix[i].iter().sum();
        // F1 = 2tp / (predicted + actual); zero when there is nothing to match.
        if predicted + actual > 0 {
            f1_sum += (2 * tp) as f64 / (predicted + actual) as f64;
        }
    }
    (
        100.0 * correct as f64 / n as f64,
        100.0 * f1_sum / classes.len() as f64,
    )
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for case in 0..200 {
        let k = rng.gen_range(2..=4);
        let classes: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let n = rng.gen_range(1..=20);
        let golds: Vec<String> = match case {
            0..=9 => vec![classes[0].clone(); n],
            _ => (0..n).map(|_| classes[rng.gen_range(0..k)].clone()).collect(),
        };
        let preds: Vec<Prediction> = match case {
            10..=19 => vec![Prediction::Abstain; n],
            20..=29 => vec![Prediction::Label(classes[k - 1].clone()); n],
            _ => (0..n)
                .map(|_| match rng.gen_range(0..=k) {
                    i if i == k => Prediction::Abstain,
                    i => Prediction::Label(classes[i].clone()),
                })
                .collect(),
        };
        let (acc, f1) = oracle(&preds, &golds, &classes);
        let got_acc = accuracy(&preds, &golds).map_err(|e| e.to_string())?;
        let got_f1 = macro_f1(&preds, &golds, &classes).map_err(|e| e.to_string())?;
        ensure(
            (acc - got_acc).abs() < 1e-9 && (f1 - got_f1).abs() < 1e-9,
            format!("case {case}: oracle ({acc}, {f1}) vs ({got_acc}, {got_f1})"),
        )?;
        checked += 1;
    }

    // Modal gold outside the F1 class set: a constant predictor scores 0 F1.
    let mut stance = task_with("stance", 3, MetricKind::MacroF1);
    stance.labels = vec!["none".into(), "favor".into(), "against".into()];
    stance.f1_classes = Some(vec!["favor".into(), "against".into()]);
    let golds = vec!["none"; 12];
    let majority = majority_score(&golds, &stance).map_err(|e| e.to_string())?;
    ensure(format_score(majority) == "0.00", format!("majority F1 {majority}"))?;
    Ok(format!("{checked} randomized cases match; single-class majority F1 = 0.00"))
}

fn segments(text: &str) -> Vec<&str> {
    text.split("\n\n").collect()
}

/// Ok when `ablated` equals `full` with exactly the one segment `removed` taken out.
fn differs_by(full: &str, ablated: &str, removed: &str) -> Result<(), String> {
    let a = segments(full);
    let b = segments(ablated);
    ensure(a.len() == b.len() + 1, format!("segment counts {} vs {}", a.len(), b.len()))?;
    let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(b.len());
    ensure(a[at] == removed, format!("removed segment is `{}`", a[at]))?;
    ensure(a[at + 1..] == b[at..], "segments after the removal differ")
}

fn ablation_structure() -> Outcome {
    let (task, questions) = metaphor();
    let t = PromptTemplateSet::default();
    let build = |knobs: StrategyKnobs| {
        build_ric_unified(&task, &questions[0], &[], &knobs, &t)
            .map(|b| b.user_text().to_string())
            .map_err(|e| e.to_string())
    };
    let full = build(StrategyKnobs::default())?;
    let no_ke = build(StrategyKnobs {
        disable_keywords: true,
        ..StrategyKnobs::default()
    })?;
    let no_ds = build(StrategyKnobs {
        disable_dialogue: true,
        ..StrategyKnobs::default()
    })?;
    differs_by(&full, &no_ke, DEFAULT_P1).map_err(|e| format!("w/o KE: {e}"))?;
    differs_by(&full, &no_ds, DEFAULT_P2).map_err(|e| format!("w/o DS: {e}"))?;
    Ok("w/o KE drops only the keyword trigger; w/o DS drops only the dialogue trigger".into())
}

fn run_and_report(concurrency: usize) -> Result<(String, String, u64), String> {
    let dir = sandbox();
    let mut config = mock_config(dir.path());
    config.max_concurrency = concurrency;
    let summary = run_experiment(&config).map_err(|e| e.to_string())?;
    ensure(summary.errors == 0, format!("{} failed records", summary.errors))?;
    let records = read(&summary.records_path);
    let report = emit_report(&summary.records, &summary.tasks, ReportOptions { baselines: true })
        .map_err(|e| e.to_string())?;
    Ok((records, report.markdown + &report.scores_csv + &report.analysis_csv, summary.network_requests))
}

fn end_to_end_determinism() -> Outcome {
    let (r1, p1, net1) = run_and_report(1)?;
    let (r2, p2, net2) = run_and_report(1)?;
    let (r8, p8, net8) = run_and_report(8)?;
    ensure(r1 == r2 && p1 == p2, "two sequential runs differ")?;
    ensure(r1 == r8 && p1 == p8, "max_concurrency 1 and 8 differ")?;
    ensure(net1 + net2 + net8 == 0, "network requests were sent")?;
    let lines = r1.lines().count();
    ensure(lines == 6 * 8, format!("expected 48 records, got {lines}"))?;
    Ok(format!("{lines} records and reports byte-identical across 3 runs (concurrency 1, 1, 8)"))
}

fn cache_economics() -> Outcome {
    let dir = sandbox();
    let config = mock_config(dir.path());
    let first = run_experiment(&config).map_err(|e| e.to_string())?;
    ensure(first.backend_calls > 0, "first pass made no backend calls")?;
    let first_bytes = read(&first.records_path);
    std::fs::remove_dir_all(&config.output_dir).map_err(|e| e.to_string())?;
    let second = run_experiment(&config).map_err(|e| e.to_string())?;
    ensure(second.executed == first.executed, "second pass did not re-evaluate")?;
    ensure(second.backend_calls == 0, format!("second pass made {} backend calls", second.backend_calls))?;
    ensure(second.cache_hits == first.backend_calls, "cache hits do not match first-pass calls")?;
    ensure(read(&second.records_path) == first_bytes, "persisted records differ between passes")?;
    Ok(format!(
        "pass 1: {} backend calls; pass 2: 0 backend calls, {} cache hits",
        first.backend_calls, second.cache_hits
    ))
}

fn sampler_coverage() -> Outcome {
    let sets = [
        load_bigbench_task(&fixture("metaphor.json")),
        load_stance_tsv(&fixture("stance.tsv"), "Donald Trump"),
        load_nli_pairs(&fixture("socnorm_train.tsv"), NliSchema::Socnorm, &ColumnMap::default()),
    ];
    let mut described = Vec::new();
    for set in sets {
        let loaded = set.map_err(|e| e.to_string())?;
        let labels = &loaded.task.labels;
        for seed in 0..100 {
            let demos = sample_demonstrations(&loaded.instances, labels, labels.len(), seed, SamplingMode::OnePerLabel)
                .map_err(|e| e.to_string())?;
            let mut golds: Vec<&str> = demos.iter().map(|d| d.question.gold.as_str()).collect();
            golds.sort();
            let mut expected: Vec<&str> = labels.iter().map(String::as_str).collect();
            expected.sort();
            ensure(golds == expected, format!("{} seed {seed}: {golds:?}", loaded.task.id))?;
        }
        described.push(format!("{} ({} labels)", loaded.task.id, labels.len()));
    }
    Ok(format!("seeds 0..100 cover each label once on {}", described.join(", ")))
}

fn network_smoke() -> Option<Outcome> {
    let endpoint = std::env::var("RIC_SMOKE_ENDPOINT").ok()?;
    let model = std::env::var("RIC_SMOKE_MODEL").unwrap_or_else(|_| "gpt-4".into());
    Some((|| {
        let (task, questions) = metaphor();
        let bundle = build_ric_unified(&task, &questions[0], &[], &StrategyKnobs::default(), &PromptTemplateSet::default())
            .map_err(|e| e.to_string())?;
        let client = CompletionClient::new(
            Box::new(HttpBackend::new(RetryPolicy::default(), Duration::from_secs(120))),
            None,
        );
        let completion = client
            .complete(&bundle, &ModelConfig::new(model, endpoint))
            .map_err(|e| e.to_string())?;
        let response = parse_response(&completion.text, &task, &[]);
        ensure(response.keywords.as_ref().is_some_and(|k| !k.is_empty()), "no keywords parsed")?;
        ensure(!response.answer.is_abstain(), "answer abstained")?;
        Ok(format!("answer {}", response.answer))
    })())
}

fn main() {
    let started = Instant::now();
    let criteria: [Criterion; 8] = [
        ("random-row reproduction", random_row),
        ("golden prompt", golden_prompt),
        ("golden parse", golden_parse),
        ("metric oracle", metric_oracle),
        ("ablation structure", ablation_structure),
        ("end-to-end determinism", end_to_end_determinism),
        ("cache economics", cache_economics),
        ("sampler coverage", sampler_coverage),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failures += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    match network_smoke() {
        None => println!("SKIP  network smoke (optional): set RIC_SMOKE_ENDPOINT to run"),
        Some(Ok(detail)) => println!("PASS  network smoke (optional): {detail}"),
        Some(Err(reason)) => println!("FAIL  network smoke (optional, non-blocking): {reason}"),
    }
    let elapsed = started.elapsed();
    println!("acceptance: {} of 8 primary criteria passed in {:.1}s", 8 - failures, elapsed.as_secs_f64());
    if failures > 0 || elapsed > Duration::from_secs(60) {
        std::process::exit(1);
    }
}
