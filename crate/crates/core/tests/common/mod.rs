#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ric_core::runner::ExperimentConfig;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures_dir().join(name)
}

/// Copies the fixture directory into a fresh temp dir so runs write their
/// cache and output there.
pub fn sandbox() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixtures_dir(), dir.path());
    dir
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// The shipped mock experiment, loaded from inside `dir`.
pub fn mock_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig::load(&dir.join("experiment.toml")).unwrap()
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub const GOLDEN_RESPONSE: &str = "Keywords:\nJoseph, heart of a lion, kind.\n\nScenario:\nSarah: I heard Joseph has the heart of a lion.\nAmy: Really? What do you mean by that?\nSarah: I mean he is very kind and brave, just like a lion.\n\nReasoning:\nFrom the conversation, we know that \u{201c}heart of a lion\u{201d} means being kind and brave. The answer is True.";

pub const METAPHOR_QUESTION: &str = "Identify whether the sentence \"Joseph is very kind.\" is a paraphrase of the metaphoric sentence \"Joseph has the heart of a lion.\"";
