use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, FixtureEntry, LlmError};

/// One `complete()` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub prompt_sha256: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub latency_ms: f64,
    pub backend: String,
}

impl LedgerRecord {
    pub(super) fn new(prompt: &str, result: &Result<String, LlmError>, latency: Duration, backend: &str) -> Self {
        let (completion, error) = match result {
            Ok(c) => (Some(c.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        LedgerRecord {
            prompt_sha256: sha256_hex(prompt),
            prompt: prompt.to_string(),
            completion,
            error,
            latency_ms: latency.as_secs_f64() * 1000.0,
            backend: backend.to_string(),
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Append-only record of LLM calls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallLedger {
    records: Vec<LedgerRecord>,
}

impl CallLedger {
    pub fn push(&mut self, record: LedgerRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: CallLedger) {
        self.records.extend(other.records);
    }

    /// Successful calls as replayable fixture entries, prompts included.
    pub fn to_fixture(&self) -> Vec<FixtureEntry> {
        self.records
            .iter()
            .filter_map(|r| {
                r.completion.as_ref().map(|c| FixtureEntry {
                    prompt_sha256: r.prompt_sha256.clone(),
                    completion: c.clone(),
                    prompt: Some(r.prompt.clone()),
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("ledger record serializes");
            out.push(b'\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let file = fs::File::open(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: LedgerRecord = serde_json::from_str(&line)
                .map_err(|e| LlmError::Io(format!("{} line {}: {e}", path.display(), n + 1)))?;
            records.push(r);
        }
        Ok(CallLedger { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let mut ledger = CallLedger::default();
        ledger.push(LedgerRecord::new("a", &Ok("x".into()), Duration::from_millis(3), "mock"));
        ledger.push(LedgerRecord::new("b", &Err(LlmError::Timeout), Duration::ZERO, "mock"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        ledger.save(&path).unwrap();
        assert_eq!(CallLedger::load(&path).unwrap(), ledger);
        assert_eq!(ledger.to_fixture().len(), 1);
    }
}
