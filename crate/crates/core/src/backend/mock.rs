use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, RawCompletion};
use crate::domain::{ChatMessage, ModelConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum Needles {
    One(String),
    Many(Vec<String>),
}

impl Default for Needles {
    fn default() -> Self {
        Needles::Many(Vec::new())
    }
}

impl From<Needles> for Vec<String> {
    fn from(n: Needles) -> Self {
        match n {
            Needles::One(s) => vec![s],
            Needles::Many(v) => v,
        }
    }
}

/// Matches when the prompt text contains every needle; no needles matches anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matcher {
    #[serde(default, with = "needles")]
    pub contains: Vec<String>,
}

mod needles {
    use super::Needles;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[String], s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        Ok(Needles::deserialize(d)?.into())
    }
}

impl Matcher {
    pub fn any() -> Self {
        Matcher::default()
    }

    pub fn contains(needle: impl Into<String>) -> Self {
        Matcher {
            contains: vec![needle.into()],
        }
    }

    pub fn all_of<I, S>(needles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Matcher {
            contains: needles.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_catch_all(&self) -> bool {
        self.contains.is_empty()
    }

    pub fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|n| prompt.contains(n.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub completion: String,
}

impl MockRule {
    pub fn new(matcher: Matcher, completion: impl Into<String>) -> Self {
        MockRule {
            matcher,
            completion: completion.into(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct MockScript {
    #[serde(rename = "rule")]
    rules: Vec<MockRule>,
}

/// Deterministic scripted backend: the first matching rule wins.
#[derive(Debug)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    invocations: AtomicU64,
}

/// Builds a mock backend from ordered rules; the last rule must be a catch-all.
pub fn mock_program(rules: Vec<MockRule>) -> Result<MockBackend, BackendError> {
    match rules.last() {
        None => Err(BackendError::MockScript("mock program has no rules".into())),
        Some(last) if !last.matcher.is_catch_all() => Err(BackendError::MockScript(
            "the final mock rule must be a catch-all (no `contains`)".into(),
        )),
        Some(_) => Ok(MockBackend {
            rules,
            invocations: AtomicU64::new(0),
        }),
    }
}

impl MockBackend {
    /// Loads `[[rule]]` tables from TOML, or `{"rule": [...]}` from a `.json` file.
    pub fn from_script(path: &Path) -> Result<Self, BackendError> {
        let fail = |e: String| BackendError::MockScript(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let script: MockScript = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| fail(e.to_string()))?
        };
        mock_program(script.rules)
    }

    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn respond(&self, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(prompt))
            .map(|r| r.completion.as_str())
            .unwrap_or_default()
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, messages: &[ChatMessage], cfg: &ModelConfig) -> Result<RawCompletion, BackendError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let prompt = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        Ok(RawCompletion {
            text: self.respond(&prompt).to_string(),
            prompt_tokens: None,
            completion_tokens: None,
            model_name: cfg.model_name.clone(),
            latency_ms: 0,
            cached: false,
        })
    }

    fn describe(&self) -> String {
        format!("mock ({} rules)", self.rules.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_rules_rejected() {
        assert!(matches!(mock_program(vec![]), Err(BackendError::MockScript(_))));
    }

    #[test]
    fn catch_all_required() {
        let rules = vec![MockRule::new(Matcher::contains("x"), "y")];
        assert!(mock_program(rules).is_err());
    }

    #[test]
    fn first_match_wins() {
        let mock = mock_program(vec![
            MockRule::new(Matcher::contains("lion"), "first"),
            MockRule::new(Matcher::all_of(["lion", "heart"]), "second"),
            MockRule::new(Matcher::any(), "fallback"),
        ])
        .unwrap();
        assert_eq!(mock.respond("heart of a lion"), "first");
        assert_eq!(mock.respond("nothing"), "fallback");
    }

    #[test]
    fn script_accepts_single_or_multiple_needles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mock.toml");
        std::fs::write(
            &path,
            r#"
[[rule]]
contains = ["heart", "lion"]
completion = "both"

[[rule]]
contains = "kind"
completion = "one"

[[rule]]
completion = "ABSTAIN"
"#,
        )
        .unwrap();
        let mock = MockBackend::from_script(&path).unwrap();
        assert_eq!(mock.respond("lion heart"), "both");
        assert_eq!(mock.respond("very kind"), "one");
        assert_eq!(mock.respond("?"), "ABSTAIN");
    }
}
