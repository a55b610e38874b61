//! Fixture files: one JSON object per line,
//! `{"prompt_sha256": "...", "completion": "...", "prompt": "..."?}`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, LlmBackend, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt_sha256: String,
    pub completion: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt: Option<String>,
}

/// Reads a fixture file. A stored prompt whose hash disagrees with its
/// `prompt_sha256`, or two different completions for one hash, is drift.
pub fn load_fixture(path: &Path) -> Result<HashMap<String, String>, LlmError> {
    let file = fs::File::open(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LlmError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: FixtureEntry = serde_json::from_str(&line)
            .map_err(|e| LlmError::Io(format!("{} line {}: {e}", path.display(), n + 1)))?;
        if let Some(prompt) = &entry.prompt {
            let actual = sha256_hex(prompt);
            if actual != entry.prompt_sha256 {
                return Err(LlmError::ReplayDrift(format!(
                    "line {}: recorded hash {} but prompt hashes to {actual}",
                    n + 1,
                    entry.prompt_sha256
                )));
            }
        }
        match map.get(&entry.prompt_sha256) {
            Some(existing) if existing != &entry.completion => {
                return Err(LlmError::ReplayDrift(format!(
                    "line {}: conflicting completions for {}",
                    n + 1,
                    entry.prompt_sha256
                )));
            }
            _ => {
                map.insert(entry.prompt_sha256, entry.completion);
            }
        }
    }
    Ok(map)
}

/// Writes entries sorted by hash with duplicates removed, so recording the
/// same calls twice gives the same bytes.
pub fn save_fixture(entries: &[FixtureEntry], path: &Path, with_prompts: bool) -> Result<(), LlmError> {
    let mut sorted: Vec<FixtureEntry> = entries
        .iter()
        .map(|e| FixtureEntry {
            prompt: if with_prompts { e.prompt.clone() } else { None },
            ..e.clone()
        })
        .collect();
    sorted.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
    sorted.dedup_by(|a, b| a.prompt_sha256 == b.prompt_sha256);
    let mut out = Vec::new();
    for e in &sorted {
        serde_json::to_writer(&mut out, e).expect("fixture entry serializes");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))
}

/// Canned completions keyed by prompt hash. Unknown prompts are an error so
/// tests stay hermetic.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    completions: HashMap<String, String>,
}

impl MockBackend {
    pub fn from_pairs<P: AsRef<str>, C: Into<String>>(pairs: impl IntoIterator<Item = (P, C)>) -> Self {
        MockBackend {
            completions: pairs
                .into_iter()
                .map(|(p, c)| (sha256_hex(p.as_ref()), c.into()))
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(MockBackend {
            completions: load_fixture(path)?,
        })
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }
}

impl LlmBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = sha256_hex(prompt);
        self.completions
            .get(&key)
            .cloned()
            .ok_or(LlmError::MockMiss { prompt_sha256: key })
    }
}

/// Answers only prompts seen in a recorded run.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    completions: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(ReplayBackend {
            completions: load_fixture(path)?,
        })
    }

    pub fn from_entries(entries: &[FixtureEntry]) -> Self {
        ReplayBackend {
            completions: entries
                .iter()
                .map(|e| (e.prompt_sha256.clone(), e.completion.clone()))
                .collect(),
        }
    }
}

impl LlmBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = sha256_hex(prompt);
        self.completions
            .get(&key)
            .cloned()
            .ok_or_else(|| LlmError::ReplayDrift(format!("prompt {key} was not recorded")))
    }
}
