//! The knowledge base: deduplicated one-sentence knowledge entries seeded
//! from dataset evidence and expanded by LLM generation.

mod expand;
mod select;
mod store;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::llm::{LlmConfig, LlmError};
use crate::retriever::RetrieverError;

pub use expand::{expand_kb, parse_completion, strip_list_marker, ExpansionReport};
pub use select::{select_examples, ExampleSelector, ScoredExample};
pub use store::{load_kb, save_kb};

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no candidate examples to select from")]
    InsufficientExamples,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] RetrieverError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Dataset,
    Generated,
}

/// Where a generated entry came from: the dataset query it was generated
/// for and the expansion iteration (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin_query_id: String,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub text: String,
    pub source: Source,
    pub db_id: String,
    pub provenance: Option<Provenance>,
}

impl KnowledgeEntry {
    pub fn from_dataset(text: &str, db_id: &str) -> Self {
        KnowledgeEntry {
            id: entry_id(text),
            text: text.to_string(),
            source: Source::Dataset,
            db_id: db_id.to_string(),
            provenance: None,
        }
    }

    pub fn generated(text: &str, db_id: &str, origin_query_id: &str, iteration: usize) -> Self {
        KnowledgeEntry {
            id: entry_id(text),
            text: text.to_string(),
            source: Source::Generated,
            db_id: db_id.to_string(),
            provenance: Some(Provenance {
                origin_query_id: origin_query_id.to_string(),
                iteration,
            }),
        }
    }
}

/// Dedup identity of a knowledge sentence: lowercase, internal whitespace
/// collapsed to single spaces, terminal punctuation removed.
pub fn normalize_knowledge(text: &str) -> String {
    let collapsed = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
        .to_string()
}

/// First 16 hex digits of SHA-256 over the normalized text.
pub fn entry_id(text: &str) -> String {
    let mut id = crate::llm::sha256_hex(&normalize_knowledge(text));
    id.truncate(16);
    id
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbBuildConfig {
    /// Relevant examples per knowledge-generation prompt.
    pub few_shot_k: usize,
    /// Expansion rounds per dataset sample.
    pub iterations: usize,
    pub seed: u64,
    /// Which split's records feed construction.
    pub split: Split,
    /// Character budget of one knowledge-generation prompt.
    pub prompt_budget: usize,
    /// Completion lines with fewer words are discarded.
    pub min_words: usize,
    /// Samples processed concurrently.
    pub jobs: usize,
    pub llm: LlmConfig,
}

impl Default for KbBuildConfig {
    fn default() -> Self {
        KbBuildConfig {
            few_shot_k: 10,
            iterations: 5,
            seed: 42,
            split: Split::Train,
            prompt_budget: 24_000,
            min_words: 3,
            jobs: 1,
            llm: LlmConfig::default(),
        }
    }
}

impl KbBuildConfig {
    pub fn validate(&self) -> Result<(), KbError> {
        if self.few_shot_k < 1 {
            return Err(KbError::Config("few_shot_k must be >= 1".into()));
        }
        if self.jobs < 1 {
            return Err(KbError::Config("jobs must be >= 1".into()));
        }
        self.llm.validate().map_err(KbError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    entries: BTreeMap<String, KnowledgeEntry>,
    pub build_config: KbBuildConfig,
    /// Hash of the run configuration that produced this knowledge base.
    pub lineage: Option<String>,
}

impl KnowledgeBase {
    pub fn new(build_config: KbBuildConfig) -> Self {
        KnowledgeBase {
            entries: BTreeMap::new(),
            build_config,
            lineage: None,
        }
    }

    /// Inserts unless an entry with the same normalized text exists.
    /// Returns whether the entry was added.
    pub fn insert(&mut self, entry: KnowledgeEntry) -> bool {
        if normalize_knowledge(&entry.text).is_empty() || self.entries.contains_key(&entry.id) {
            return false;
        }
        self.entries.insert(entry.id.clone(), entry);
        true
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeEntry> {
        self.entries.get(id)
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.entries.contains_key(&entry_id(text))
    }

    /// Entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Seeds a knowledge base with every distinct evidence text in `dataset`.
pub fn init_kb(dataset: &Dataset, build_config: KbBuildConfig) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new(build_config);
    for r in &dataset.records {
        if let Some(k) = &r.knowledge {
            kb.insert(KnowledgeEntry::from_dataset(k, &r.schema_ref));
        }
    }
    kb
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub total: usize,
    pub dataset: usize,
    pub generated: usize,
    pub by_db: BTreeMap<String, usize>,
    pub by_iteration: BTreeMap<usize, usize>,
}

pub fn kb_stats(kb: &KnowledgeBase) -> StatsReport {
    let mut stats = StatsReport::default();
    for e in kb.entries() {
        stats.total += 1;
        match e.source {
            Source::Dataset => stats.dataset += 1,
            Source::Generated => stats.generated += 1,
        }
        *stats.by_db.entry(e.db_id.clone()).or_default() += 1;
        if let Some(p) = &e.provenance {
            *stats.by_iteration.entry(p.iteration).or_default() += 1;
        }
    }
    stats
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "entries     {:>8}", self.total)?;
        writeln!(f, "  dataset   {:>8}", self.dataset)?;
        writeln!(f, "  generated {:>8}", self.generated)?;
        if !self.by_db.is_empty() {
            writeln!(f, "by database")?;
            for (db, n) in &self.by_db {
                writeln!(f, "  {db:<24} {n:>8}")?;
            }
        }
        if !self.by_iteration.is_empty() {
            writeln!(f, "by iteration")?;
            for (i, n) in &self.by_iteration {
                writeln!(f, "  {i:<24} {n:>8}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ExampleTriplet, Query};
    use proptest::prelude::*;

    pub(crate) fn record(id: &str, question: &str, knowledge: Option<&str>, db: &str) -> ExampleTriplet {
        ExampleTriplet {
            query: Query {
                id: id.into(),
                text: question.into(),
                db_id: db.into(),
            },
            schema_ref: db.into(),
            knowledge: knowledge.map(Into::into),
            gold_sql: Some(format!("SELECT {id}")),
        }
    }

    fn dataset(records: Vec<ExampleTriplet>) -> Dataset {
        Dataset {
            records,
            schemas: Default::default(),
            split: Split::Train,
        }
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_knowledge("  New York  refers to\tstate = 'NY'. "), "new york refers to state = 'ny'");
        assert_eq!(normalize_knowledge("ALB between 3.5 and 5.5!?"), "alb between 3.5 and 5.5");
        assert_eq!(entry_id("Trainee is a Position."), entry_id("trainee is a position"));
        assert_eq!(entry_id("x").len(), 16);
    }

    #[test]
    fn init_dedups_identical_evidence() {
        let ds = dataset(vec![
            record("1", "a?", Some("x refers to y"), "db"),
            record("2", "b?", Some("X refers to y."), "db"),
        ]);
        let kb = init_kb(&ds, KbBuildConfig::default());
        assert_eq!(kb.len(), 1);
        assert_eq!(kb.entries().next().unwrap().text, "x refers to y");
    }

    #[test]
    fn init_without_evidence_is_empty() {
        let ds = dataset(vec![record("1", "a?", None, "db")]);
        assert!(init_kb(&ds, KbBuildConfig::default()).is_empty());
    }

    #[test]
    fn init_counts_distinct_texts() {
        let records = (0..60)
            .map(|i| record(&i.to_string(), "q?", Some(&format!("fact number {}", i % 17)), "db"))
            .collect();
        let kb = init_kb(&dataset(records), KbBuildConfig::default());
        assert_eq!(kb.len(), 17);
        let stats = kb_stats(&kb);
        assert_eq!(stats.generated, 0);
        assert_eq!(stats.dataset + stats.generated, stats.total);
    }

    #[test]
    fn stats_partition_by_source_and_iteration() {
        let mut kb = KnowledgeBase::default();
        kb.insert(KnowledgeEntry::from_dataset("a refers to b", "db1"));
        kb.insert(KnowledgeEntry::generated("c refers to d", "db1", "q1", 1));
        kb.insert(KnowledgeEntry::generated("e refers to f", "db2", "q1", 2));
        kb.insert(KnowledgeEntry::generated("g refers to h", "db2", "q2", 2));
        let s = kb_stats(&kb);
        assert_eq!((s.total, s.dataset, s.generated), (4, 1, 3));
        assert_eq!(s.by_db["db2"], 2);
        assert_eq!(s.by_iteration[&2], 2);
        assert!(s.to_string().contains("generated        3"));
    }

    #[test]
    fn invalid_config() {
        let c = KbBuildConfig {
            few_shot_k: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn dedup_soundness(texts in proptest::collection::vec("[a-cA-C ,.]{1,8}", 0..40)) {
            let mut kb = KnowledgeBase::default();
            for t in &texts {
                kb.insert(KnowledgeEntry::from_dataset(t, "db"));
            }
            let norms: Vec<String> = kb.entries().map(|e| normalize_knowledge(&e.text)).collect();
            let mut dedup = norms.clone();
            dedup.sort();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), norms.len());
        }

        #[test]
        fn normalization_is_idempotent(t in "\\PC{0,30}") {
            let once = normalize_knowledge(&t);
            prop_assert_eq!(normalize_knowledge(&once), once.clone());
        }
    }
}
