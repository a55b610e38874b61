//! Run configuration: one TOML file with sections, overridden by flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetFormat;
use crate::evaluation::EvalConfig;
use crate::knowledge_base::KbBuildConfig;
use crate::llm::{sha256_hex, LlmConfig};
use crate::pipeline::GenerationConfig;
use crate::retriever::{EmbeddingConfig, TrainConfig};

/// Which records feed knowledge-base construction relative to the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Training records as they are; test databases may appear in them.
    #[default]
    Overlap,
    /// Training records on test databases are dropped.
    NonOverlap,
    /// Knowledge comes from another dataset (`data.kb_source`).
    CrossDataset,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Overlap => "overlap",
            Scenario::NonOverlap => "non-overlap",
            Scenario::CrossDataset => "cross-dataset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: String,
    pub test: String,
    pub format: DatasetFormat,
    /// Dataset the knowledge base is built from in the cross-dataset scenario.
    pub kb_source: Option<String>,
    pub kb_source_format: DatasetFormat,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: "train.json".into(),
            test: "test.json".into(),
            format: DatasetFormat::Bird,
            kb_source: None,
            kb_source_format: DatasetFormat::Bird,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    /// Project embeddings through the trained head.
    pub use_head: bool,
    /// Labeled retrieval set (JSONL); derived from test evidence when unset.
    pub labeled: Option<String>,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            use_head: true,
            labeled: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactPaths {
    pub kb: String,
    pub head: String,
    pub outputs: String,
    pub report: String,
    /// Directory for per-command call ledgers.
    pub ledgers: String,
    /// Completion fixture for the mock and replay backends.
    pub fixtures: Option<String>,
}

impl Default for ArtifactPaths {
    fn default() -> Self {
        ArtifactPaths {
            kb: "kb.jsonl".into(),
            head: "head.txt".into(),
            outputs: "outputs.jsonl".into(),
            report: "report.json".into(),
            ledgers: "ledgers".into(),
            fixtures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub jobs: usize,
    pub data: DataConfig,
    pub embedding: EmbeddingConfig,
    pub kb: KbBuildConfig,
    pub training: TrainConfig,
    pub retriever: RetrieverConfig,
    pub generation: GenerationConfig,
    pub llm: LlmConfig,
    pub eval: EvalConfig,
    pub artifacts: ArtifactPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            scenario: Scenario::Overlap,
            jobs: 1,
            data: DataConfig::default(),
            embedding: EmbeddingConfig::default(),
            kb: KbBuildConfig::default(),
            training: TrainConfig::default(),
            retriever: RetrieverConfig::default(),
            generation: GenerationConfig::default(),
            llm: LlmConfig::default(),
            eval: EvalConfig::default(),
            artifacts: ArtifactPaths::default(),
        }
    }
}

/// Artifact-producing stages, each with its own lineage hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Kb,
    Retriever,
    Generation,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copies the global seed and job count into the sections that use them.
    pub fn propagate(&mut self) {
        self.kb.seed = self.seed;
        self.training.seed = self.seed;
        self.kb.jobs = self.jobs;
        self.generation.jobs = self.jobs;
        self.eval.jobs = self.jobs;
        self.kb.llm = self.llm.clone();
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.jobs == 0 {
            return Err("jobs must be >= 1".into());
        }
        self.llm.validate()?;
        self.kb.validate().map_err(|e| e.to_string())?;
        if self.scenario == Scenario::CrossDataset && self.data.kb_source.is_none() {
            return Err("scenario cross-dataset needs data.kb_source".into());
        }
        if self.generation.budget > self.llm.max_context_chars || self.kb.prompt_budget > self.llm.max_context_chars {
            return Err("prompt budgets must not exceed llm.max_context_chars".into());
        }
        Ok(())
    }

    /// Hash of the settings that determine a stage's artifact. Job counts,
    /// the evaluation section and artifact paths are excluded.
    pub fn lineage(&self, stage: Stage) -> String {
        let value = match stage {
            Stage::Kb => {
                let mut kb = self.kb.clone();
                kb.jobs = 0;
                serde_json::json!({
                    "stage": "kb",
                    "seed": self.seed,
                    "scenario": self.scenario,
                    "data": self.data,
                    "embedding": self.embedding,
                    "kb": kb,
                })
            }
            Stage::Retriever => serde_json::json!({
                "stage": "retriever",
                "seed": self.seed,
                "scenario": self.scenario,
                "data": self.data,
                "embedding": self.embedding,
                "training": self.training,
            }),
            Stage::Generation => {
                let mut generation = self.generation.clone();
                generation.jobs = 0;
                generation.record_timings = false;
                serde_json::json!({
                    "stage": "generation",
                    "kb": self.lineage(Stage::Kb),
                    "retriever": self.retriever.use_head.then(|| self.lineage(Stage::Retriever)),
                    "generation": generation,
                    "llm": self.llm,
                })
            }
        };
        let mut h = sha256_hex(&value.to_string());
        h.truncate(16);
        h
    }
}
