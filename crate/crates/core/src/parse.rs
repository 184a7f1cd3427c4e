//! Decomposes raw completions into keywords, scenario, reasoning and answer,
//! and aggregates the corpus-level statistics over parsed responses.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{
    canonicalize_label, AnswerOption, Prediction, StructuredResponse, TaskSpec, Utterance,
};

/// Longest speaker name accepted in a `Name: text` line.
pub const MAX_SPEAKER_CHARS: usize = 40;

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?im)^[ \t]*(?:[#>*_-]+[ \t]*)?(keywords?|scenario|reasoning)(?:\*\*|__|\*)?[ \t]*(?::(?:\*\*|__|\*)?[ \t]*|$)",
    )
    .unwrap()
});

static ANSWER_IS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bthe\s+(?:final\s+|correct\s+)?answer\s+(?:is|would\s+be|should\s+be)\s*:?[ \t]*([^\n]*)")
        .unwrap()
});

static FINAL_ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:final\s+)?answer\s*:[ \t]*([^\n]*)").unwrap());

static OPTION_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Za-z])\)").unwrap());

static LEADING_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\(?([A-Za-z])\)(?:\s|$|[.,;:])").unwrap());

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[-*\u{2022}]\s+|\d+[.)]\s+)").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Keywords,
    Scenario,
    Reasoning,
}

/// Location of one header and the block that follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionSpan {
    pub kind: SectionKind,
    pub header: Range<usize>,
    pub body: Range<usize>,
}

/// The three named blocks of a completion. Blocks keep their raw text;
/// callers trim as needed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sections {
    pub keywords: Option<String>,
    pub scenario: Option<String>,
    pub reasoning: Option<String>,
    /// Text before the first header.
    pub preamble: String,
    pub spans: Vec<SectionSpan>,
}

impl Sections {
    pub fn has_headers(&self) -> bool {
        !self.spans.is_empty()
    }

    /// Headers and blocks concatenated in their original order.
    pub fn reassemble(&self, text: &str) -> String {
        self.spans
            .iter()
            .map(|s| format!("{}{}", &text[s.header.clone()], &text[s.body.clone()]))
            .collect()
    }
}

fn section_kind(word: &str) -> SectionKind {
    match word.to_ascii_lowercase().as_str() {
        "scenario" => SectionKind::Scenario,
        "reasoning" => SectionKind::Reasoning,
        _ => SectionKind::Keywords,
    }
}

/// Splits a completion on `Keywords:` / `Scenario:` / `Reasoning:` headers.
///
/// Each block runs from its header to the next header or the end of the text.
/// A repeated header appends to its block. Text before the first header
/// becomes the reasoning block when there is no `Reasoning:` header and is
/// otherwise dropped.
pub fn split_sections(text: &str) -> Sections {
    let headers: Vec<(SectionKind, Range<usize>)> = HEADER
        .captures_iter(text)
        .map(|c| (section_kind(&c[1]), c.get(0).unwrap().range()))
        .collect();
    let mut sections = Sections {
        preamble: text[..headers.first().map_or(text.len(), |h| h.1.start)].to_string(),
        ..Default::default()
    };
    for (i, (kind, header)) in headers.iter().enumerate() {
        let end = headers.get(i + 1).map_or(text.len(), |h| h.1.start);
        let body = header.end..end;
        let slot = match kind {
            SectionKind::Keywords => &mut sections.keywords,
            SectionKind::Scenario => &mut sections.scenario,
            SectionKind::Reasoning => &mut sections.reasoning,
        };
        match slot {
            Some(existing) => {
                existing.push('\n');
                existing.push_str(&text[body.clone()]);
            }
            None => *slot = Some(text[body.clone()].to_string()),
        }
        sections.spans.push(SectionSpan {
            kind: *kind,
            header: header.clone(),
            body,
        });
    }
    if sections.has_headers() && !sections.preamble.trim().is_empty() {
        if sections.reasoning.is_none() {
            sections.reasoning = Some(sections.preamble.clone());
        } else {
            tracing::debug!(preamble = %sections.preamble.trim(), "discarding text before first header");
        }
    }
    sections
}

fn strip_list_marker(s: &str) -> &str {
    LIST_MARKER.find(s).map_or(s, |m| &s[m.end()..])
}

/// Splits a keyword block on commas and newlines.
pub fn extract_keywords(block: &str) -> Vec<String> {
    block
        .split([',', '\n'])
        .map(|k| strip_list_marker(k.trim()).trim().trim_end_matches('.').trim())
        .filter(|k| !k.is_empty())
        .map(str::to_string)
        .collect()
}

const SENTENCE_PUNCTUATION: &[char] = &['.', '!', '?', ';', ',', '"'];

fn speaker_line(line: &str) -> Option<(String, String)> {
    let (head, rest) = line.split_once(':')?;
    if rest.starts_with("//") {
        return None;
    }
    let speaker = head.trim().trim_matches(|c| c == '*' || c == '_').trim();
    if speaker.is_empty()
        || speaker.chars().count() > MAX_SPEAKER_CHARS
        || speaker.contains(SENTENCE_PUNCTUATION)
    {
        return None;
    }
    let text = rest.trim_start_matches(['*', '_']).trim();
    Some((speaker.to_string(), text.to_string()))
}

/// Parses `Name: text` lines into utterances; other lines continue the previous utterance.
pub fn parse_scenario(block: &str) -> Vec<Utterance> {
    let mut utterances: Vec<Utterance> = Vec::new();
    for raw in block.lines() {
        let line = strip_list_marker(raw.trim()).trim();
        if line.is_empty() {
            continue;
        }
        match speaker_line(line) {
            Some((speaker, text)) => utterances.push(Utterance { speaker, text }),
            None => match utterances.last_mut() {
                Some(prev) => {
                    if !prev.text.is_empty() {
                        prev.text.push(' ');
                    }
                    prev.text.push_str(line);
                }
                None => tracing::debug!(line, "scenario line before any speaker"),
            },
        }
    }
    utterances
}

/// Speaker alternations divided by two (floor), at least one once two
/// utterances exist; zero for at most one utterance.
pub fn count_dialogue_turns(utterances: &[Utterance]) -> usize {
    if utterances.len() <= 1 {
        return 0;
    }
    let alternations = utterances
        .windows(2)
        .filter(|w| w[0].speaker != w[1].speaker)
        .count();
    (alternations / 2).max(1)
}

fn resolve_fragment(fragment: &str, task: &TaskSpec, options: &[AnswerOption]) -> Option<String> {
    let fragment = fragment.trim();
    if let Some(label) = canonicalize_label(fragment, task, options) {
        return Some(label);
    }
    let clause = fragment
        .split(['\n', ';', ','])
        .next()
        .unwrap_or_default();
    let sentence = clause.split(". ").next().unwrap_or_default();
    for candidate in [clause, sentence] {
        if let Some(label) = canonicalize_label(candidate, task, options) {
            return Some(label);
        }
    }
    if let Some(c) = LEADING_LETTER.captures(fragment) {
        if let Some(label) = canonicalize_label(&c[1], task, options) {
            return Some(label);
        }
    }
    mentions(fragment, task, options)
        .into_iter()
        .min_by_key(|m| (m.start, std::cmp::Reverse(m.end)))
        .map(|m| m.label)
}

struct Mention {
    start: usize,
    end: usize,
    label: String,
}

fn surface_pattern(surface: &str) -> Option<Regex> {
    let trimmed = surface.trim();
    let first = trimmed.chars().next()?;
    let last = trimmed.chars().last()?;
    let mut pattern = String::from("(?i)");
    if first.is_alphanumeric() || first == '_' {
        pattern.push_str(r"\b");
    }
    pattern.push_str(&regex::escape(trimmed));
    if last.is_alphanumeric() || last == '_' {
        pattern.push_str(r"\b");
    }
    Regex::new(&pattern).ok()
}

/// Every occurrence of a label, alias or option text in `text`.
fn mentions(text: &str, task: &TaskSpec, options: &[AnswerOption]) -> Vec<Mention> {
    let mut surfaces: Vec<(&str, String)> = task.labels.iter().map(|l| (l.as_str(), l.clone())).collect();
    surfaces.extend(task.aliases.iter().map(|(a, l)| (a.as_str(), l.clone())));
    for option in options {
        if let Some(label) = canonicalize_label(option.text(), task, &[]) {
            surfaces.push((option.text(), label));
        }
    }
    let mut found = Vec::new();
    for (surface, label) in surfaces {
        if let Some(re) = surface_pattern(surface) {
            found.extend(re.find_iter(text).map(|m| Mention {
                start: m.start(),
                end: m.end(),
                label: label.clone(),
            }));
        }
    }
    found
}

fn last_cue(re: &Regex, text: &str, task: &TaskSpec, options: &[AnswerOption]) -> Option<String> {
    re.captures_iter(text)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .find_map(|c| resolve_fragment(&c[1], task, options))
}

/// Extracts the final answer from free text.
///
/// Cue phrases are tried in priority order ("the answer is X", then
/// "final answer: X", then a standalone option letter such as "(b)"); the
/// fallback is the last label or alias mentioned anywhere in the text.
pub fn extract_answer(text: &str, task: &TaskSpec, options: &[AnswerOption]) -> Prediction {
    if let Some(label) = last_cue(&ANSWER_IS, text, task, options) {
        return Prediction::Label(label);
    }
    if let Some(label) = last_cue(&FINAL_ANSWER, text, task, options) {
        return Prediction::Label(label);
    }
    let letter = OPTION_LETTER
        .captures_iter(text)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .find_map(|c| canonicalize_label(&c[0], task, options));
    if let Some(label) = letter {
        return Prediction::Label(label);
    }
    mentions(text, task, options)
        .into_iter()
        .max_by_key(|m| (m.end, std::cmp::Reverse(m.start)))
        .map_or(Prediction::Abstain, |m| Prediction::Label(m.label))
}

/// Full decomposition of a completion into a [`StructuredResponse`].
pub fn parse_response(text: &str, task: &TaskSpec, options: &[AnswerOption]) -> StructuredResponse {
    let sections = split_sections(text);
    let reasoning = match &sections.reasoning {
        Some(block) => block.trim().to_string(),
        None if !sections.has_headers() => text.trim().to_string(),
        None => String::new(),
    };
    let mut answer = extract_answer(&reasoning, task, options);
    if answer.is_abstain() {
        answer = extract_answer(text, task, options);
    }
    StructuredResponse {
        keywords: sections.keywords.as_deref().map(extract_keywords),
        scenario: sections.scenario.as_deref().map(parse_scenario),
        reasoning,
        answer,
    }
}

/// Keyword, turn and abstention statistics over a set of responses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStatistics {
    pub responses: usize,
    pub mean_keyword_count: Option<f64>,
    pub mean_turn_count: Option<f64>,
    /// Fraction in `[0, 1]`.
    pub abstain_rate: Option<f64>,
    pub keywords_absent: usize,
    pub scenario_absent: usize,
}

fn mean(values: &[usize]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<usize>() as f64 / values.len() as f64)
}

pub fn corpus_statistics<'a, I>(responses: I) -> CorpusStatistics
where
    I: IntoIterator<Item = &'a StructuredResponse>,
{
    let mut keyword_counts = Vec::new();
    let mut turn_counts = Vec::new();
    let mut stats = CorpusStatistics::default();
    let mut abstentions = 0usize;
    for response in responses {
        stats.responses += 1;
        match &response.keywords {
            Some(k) => keyword_counts.push(k.len()),
            None => stats.keywords_absent += 1,
        }
        match &response.scenario {
            Some(s) => turn_counts.push(count_dialogue_turns(s)),
            None => stats.scenario_absent += 1,
        }
        if response.answer.is_abstain() {
            abstentions += 1;
        }
    }
    stats.mean_keyword_count = mean(&keyword_counts);
    stats.mean_turn_count = mean(&turn_counts);
    stats.abstain_rate = (stats.responses > 0).then(|| abstentions as f64 / stats.responses as f64);
    stats
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::domain::fixtures::*;

    pub const GOLDEN_RESPONSE: &str = "Keywords:\nJoseph, heart of a lion, kind.\n\nScenario:\nSarah: I heard Joseph has the heart of a lion.\nAmy: Really? What do you mean by that?\nSarah: I mean he is very kind and brave, just like a lion.\n\nReasoning:\nFrom the conversation, we know that \u{201c}heart of a lion\u{201d} means being kind and brave. The answer is True.";

    #[test]
    fn golden_response_sections() {
        let s = split_sections(GOLDEN_RESPONSE);
        assert_eq!(s.keywords.as_deref().unwrap().trim(), "Joseph, heart of a lion, kind.");
        let scenario = parse_scenario(s.scenario.as_deref().unwrap());
        assert_eq!(scenario.len(), 3);
        assert!(s.reasoning.as_deref().unwrap().trim().ends_with("The answer is True."));
    }

    #[test]
    fn golden_response_parses_fully() {
        let r = parse_response(GOLDEN_RESPONSE, &metaphor_task(), &[]);
        assert_eq!(
            r.keywords.as_deref().unwrap(),
            ["Joseph", "heart of a lion", "kind"]
        );
        let scenario = r.scenario.as_deref().unwrap();
        let speakers: Vec<&str> = scenario.iter().map(|u| u.speaker.as_str()).collect();
        assert_eq!(speakers, ["Sarah", "Amy", "Sarah"]);
        assert_eq!(scenario[1].text, "Really? What do you mean by that?");
        assert_eq!(count_dialogue_turns(scenario), 1);
        assert_eq!(r.answer, Prediction::Label("True".into()));
    }

    #[test]
    fn no_headers_keeps_full_text() {
        let s = split_sections("I think it is True.");
        assert!(s.keywords.is_none() && s.scenario.is_none() && s.reasoning.is_none());
        let r = parse_response("I think it is True.", &metaphor_task(), &[]);
        assert_eq!(r.reasoning, "I think it is True.");
        assert_eq!(r.answer, Prediction::Label("True".into()));
        assert!(r.keywords.is_none());
    }

    #[test]
    fn permuted_headers_assigned_by_name() {
        let permuted = "Reasoning:\nFrom the conversation, we know. The answer is True.\n\nKeywords:\nJoseph, heart of a lion, kind.\n\nScenario:\nSarah: I heard Joseph has the heart of a lion.\nAmy: Really? What do you mean by that?\nSarah: I mean he is very kind and brave, just like a lion.\n";
        let r = parse_response(permuted, &metaphor_task(), &[]);
        assert_eq!(r.keywords.as_deref().unwrap().len(), 3);
        assert_eq!(r.scenario.as_deref().unwrap().len(), 3);
        assert!(r.reasoning.starts_with("From the conversation"));
        assert_eq!(r.answer, Prediction::Label("True".into()));
    }

    #[test]
    fn markdown_headers_and_preamble() {
        let text = "Sure! Here you go.\n**Keywords:** lion, heart\n## Scenario\n**A:** hi\nB: hello\n";
        let s = split_sections(text);
        assert_eq!(extract_keywords(s.keywords.as_deref().unwrap()), ["lion", "heart"]);
        let scenario = parse_scenario(s.scenario.as_deref().unwrap());
        assert_eq!(scenario, [Utterance::new("A", "hi"), Utterance::new("B", "hello")]);
        assert_eq!(s.reasoning.as_deref(), Some("Sure! Here you go.\n"));
    }

    #[test]
    fn keyword_trimming() {
        assert_eq!(extract_keywords("Joseph, heart of a lion, kind."), ["Joseph", "heart of a lion", "kind"]);
        assert!(extract_keywords("").is_empty());
        assert_eq!(extract_keywords("a,\n b , ,c."), ["a", "b", "c"]);
        assert_eq!(extract_keywords("- lion\n- courage"), ["lion", "courage"]);
    }

    #[test]
    fn scenario_continuations_and_false_speakers() {
        let block = "Sarah: I heard Joseph\nhas the heart of a lion.\nAmy: Really?";
        let u = parse_scenario(block);
        assert_eq!(u.len(), 2);
        assert_eq!(u[0].text, "I heard Joseph has the heart of a lion.");

        let block = "Sarah: Look at this.\nIn the article I read last week about lions and courage: it said";
        let u = parse_scenario(block);
        assert_eq!(u.len(), 1);
        assert!(u[0].text.ends_with("lions and courage: it said"));

        let u = parse_scenario("Sarah: see https://x: y\nhttps://example.com: z");
        assert_eq!(u.len(), 1);
    }

    fn speakers(names: &[&str]) -> Vec<Utterance> {
        names.iter().map(|n| Utterance::new(*n, "x")).collect()
    }

    #[test]
    fn turn_counting_rule() {
        assert_eq!(count_dialogue_turns(&speakers(&["Sarah", "Amy", "Sarah"])), 1);
        assert_eq!(count_dialogue_turns(&speakers(&["A", "B", "A", "B"])), 1);
        assert_eq!(count_dialogue_turns(&speakers(&["A", "B", "A", "B", "A"])), 2);
        assert_eq!(count_dialogue_turns(&speakers(&["A"])), 0);
        assert_eq!(count_dialogue_turns(&[]), 0);
        assert_eq!(count_dialogue_turns(&speakers(&["A", "A"])), 1);
    }

    #[test]
    fn answer_cues() {
        let task = metaphor_task();
        assert_eq!(extract_answer("blah. The answer is True.", &task, &[]), Prediction::Label("True".into()));
        assert_eq!(extract_answer("It is not False; it must be True.", &task, &[]), Prediction::Label("True".into()));
        assert_eq!(extract_answer("I cannot decide.", &task, &[]), Prediction::Abstain);
        assert_eq!(extract_answer("Final answer: false", &task, &[]), Prediction::Label("False".into()));
        assert_eq!(
            extract_answer("The answer is True, although one could argue False.", &task, &[]),
            Prediction::Label("True".into())
        );
        assert_eq!(
            extract_answer("The answer is clearly that it is False.", &task, &[]),
            Prediction::Label("False".into())
        );
    }

    #[test]
    fn option_letter_answers() {
        let task = pronoun_task();
        let options = pronoun_options();
        assert_eq!(
            extract_answer("The answer is (b).", &task, &options),
            Prediction::Label("We could not meet".into())
        );
        assert_eq!(
            extract_answer("Between (a) and (c), I pick (c)", &task, &options),
            Prediction::Label("Ambiguous".into())
        );
        assert_eq!(
            extract_answer("So Alex could not meet.", &task, &options),
            Prediction::Label("Alex could not meet".into())
        );
    }

    #[test]
    fn longer_overlapping_label_wins() {
        let mut task = metaphor_task();
        task.labels = vec!["joke".into(), "not a joke".into()];
        assert_eq!(
            extract_answer("Overall this is not a joke.", &task, &[]),
            Prediction::Label("not a joke".into())
        );
    }

    #[test]
    fn statistics() {
        let with = |k: usize| StructuredResponse {
            keywords: Some(vec!["k".into(); k]),
            scenario: Some(speakers(&["A", "B"])),
            reasoning: String::new(),
            answer: Prediction::Label("True".into()),
        };
        let stats = corpus_statistics(&[with(3), with(5)]);
        assert_eq!(stats.mean_keyword_count, Some(4.0));
        assert_eq!(stats.mean_turn_count, Some(1.0));
        assert_eq!(stats.abstain_rate, Some(0.0));

        let empty = corpus_statistics(&[]);
        assert_eq!(empty.mean_keyword_count, None);
        assert_eq!(empty.mean_turn_count, None);
        assert_eq!(empty.abstain_rate, None);

        let bare = StructuredResponse::default();
        let stats = corpus_statistics(&[with(2), bare]);
        assert_eq!(stats.mean_keyword_count, Some(2.0));
        assert_eq!(stats.keywords_absent, 1);
        assert_eq!(stats.abstain_rate, Some(0.5));
    }

    fn arb_body() -> impl Strategy<Value = String> {
        "[a-z ,.\n]{0,40}".prop_filter("no header-like words", |s| {
            !HEADER.is_match(s)
        })
    }

    proptest! {
        #[test]
        fn sections_are_lossless(
            order in Just(vec!["Keywords:", "Scenario:", "Reasoning:"]).prop_shuffle(),
            bodies in proptest::collection::vec(arb_body(), 3),
        ) {
            let text: String = order
                .iter()
                .zip(&bodies)
                .map(|(h, b)| format!("{h}\n{b}\n"))
                .collect();
            let sections = split_sections(&text);
            prop_assert_eq!(sections.spans.len(), 3);
            prop_assert_eq!(sections.reassemble(&text), text);
        }

        #[test]
        fn answers_stay_in_label_space(text in ".{0,80}") {
            for (task, options) in [(metaphor_task(), vec![]), (pronoun_task(), pronoun_options()), (stance_task(), vec![])] {
                match extract_answer(&text, &task, &options) {
                    Prediction::Label(l) => prop_assert!(task.has_label(&l)),
                    Prediction::Abstain => {}
                }
            }
        }

        #[test]
        fn turns_invariant_under_renaming(names in proptest::collection::vec(0u8..3, 0..10)) {
            let original: Vec<Utterance> = names.iter().map(|n| Utterance::new(format!("S{n}"), "x")).collect();
            let renamed: Vec<Utterance> = names.iter().map(|n| Utterance::new(format!("Person {}", (n + 1) % 3), "x")).collect();
            prop_assert_eq!(count_dialogue_turns(&original), count_dialogue_turns(&renamed));
        }
    }
}
