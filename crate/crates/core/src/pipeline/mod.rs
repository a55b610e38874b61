//! Knowledge refinement and knowledge-augmented SQL generation.

mod postprocess;
mod prompt;

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use postprocess::extract_sql;
pub use prompt::{build_knowledge_prompt, build_refinement_prompt, build_sql_prompt, PromptKind, PromptTemplate};

use crate::dataset::{DatabaseSchema, Dataset, ExampleTriplet, Query};
use crate::knowledge_base::{ExampleSelector, KbError, KnowledgeEntry};
use crate::llm::{LlmClient, LlmError};
use crate::retriever::{Retriever, RetrieverError};
use crate::util::parallel_map;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("prompt needs at least {needed} chars but the budget is {budget}")]
    Budget { needed: usize, budget: usize },
    #[error("completion contains no SQL")]
    EmptySql,
    #[error("no schema for database `{0}`")]
    MissingSchema(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Examples(#[from] KbError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedKnowledge {
    /// Completion lines joined with `"; "`; empty if the model returned nothing.
    pub text: String,
    pub query_id: String,
    pub retrieved_ids: Vec<String>,
    pub schema_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlStatement {
    pub text: String,
    pub query_id: String,
    /// The Evidence line the statement was generated with.
    pub knowledge: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Retrieved entries per query; 0 runs the no-knowledge baseline.
    pub j: usize,
    /// Character budget of every prompt.
    pub budget: usize,
    /// Rewrite retrieved entries with the LLM; otherwise they are joined
    /// into the Evidence line as they are.
    pub use_refinement: bool,
    /// Few-shot examples per SQL prompt.
    pub few_shot_k: usize,
    pub jobs: usize,
    /// Adds per-stage wall-clock timings to outputs (not byte-stable).
    pub record_timings: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            j: 5,
            budget: 24_000,
            use_refinement: true,
            few_shot_k: 10,
            jobs: 1,
            record_timings: false,
        }
    }
}

/// Turns a knowledge completion into one Evidence line.
pub fn knowledge_from_completion(completion: &str) -> String {
    let mut parts = Vec::new();
    for line in completion.lines() {
        let line = line.trim();
        if line.starts_with("Question:") {
            break;
        }
        let line = crate::knowledge_base::strip_list_marker(line);
        let line = line.strip_prefix("Evidence:").unwrap_or(line).trim();
        if !line.is_empty() {
            parts.push(line.to_string());
        }
    }
    parts.join("; ")
}

pub fn refine_knowledge(
    query: &Query,
    retrieved: &[KnowledgeEntry],
    schema: &DatabaseSchema,
    llm: &LlmClient,
    budget: usize,
) -> Result<RefinedKnowledge, PipelineError> {
    let prompt = build_refinement_prompt(query, retrieved, schema, budget)?;
    let completion = llm.complete(&prompt)?;
    Ok(RefinedKnowledge {
        text: knowledge_from_completion(&completion),
        query_id: query.id.clone(),
        retrieved_ids: retrieved.iter().map(|e| e.id.clone()).collect(),
        schema_id: schema.db_id.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub retrieve_ms: f64,
    pub refine_ms: f64,
    pub generate_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub sql: SqlStatement,
    pub refined: Option<RefinedKnowledge>,
    pub retrieved: Vec<(KnowledgeEntry, f64)>,
    pub timings: Timings,
}

/// Retrieval, optional refinement and SQL generation for one query.
pub struct Generator<'a> {
    pub retriever: Option<&'a Retriever>,
    pub llm: &'a LlmClient,
    /// Few-shot pool; zero-shot when absent.
    pub examples: Option<&'a ExampleSelector>,
    pub config: GenerationConfig,
}

impl Generator<'_> {
    pub fn generate(&self, query: &Query, schema: &DatabaseSchema) -> Result<Generation, PipelineError> {
        let mut timings = Timings::default();
        let t = Instant::now();
        let retrieved = match (self.config.j, self.retriever) {
            (0, _) | (_, None) => Vec::new(),
            (j, Some(r)) => r.retrieve(&query.text, j)?,
        };
        timings.retrieve_ms = ms(t);

        let t = Instant::now();
        let entries: Vec<KnowledgeEntry> = retrieved.iter().map(|(e, _)| e.clone()).collect();
        let (evidence, refined) = if self.config.j == 0 {
            (String::new(), None)
        } else if self.config.use_refinement {
            let r = refine_knowledge(query, &entries, schema, self.llm, self.config.budget)?;
            (r.text.clone(), Some(r))
        } else {
            (entries.iter().map(|e| e.text.as_str()).collect::<Vec<_>>().join("; "), None)
        };
        timings.refine_ms = ms(t);

        let t = Instant::now();
        let examples: Vec<ExampleTriplet> = match self.examples {
            Some(sel) if self.config.few_shot_k > 0 && !sel.is_empty() => {
                let provider = match self.retriever {
                    Some(r) => r.provider(),
                    None => return Err(PipelineError::Examples(KbError::Config("few-shot selection needs an embedder".into()))),
                };
                match sel.select(query, self.config.few_shot_k, provider) {
                    Ok(v) => v.into_iter().map(|s| s.record).collect(),
                    Err(KbError::InsufficientExamples) => Vec::new(),
                    Err(e) => return Err(e.into()),
                }
            }
            _ => Vec::new(),
        };
        let prompt = build_sql_prompt(query, &evidence, schema, &examples, self.config.budget)?;
        let completion = self.llm.complete(&prompt)?;
        let text = extract_sql(&completion).ok_or(PipelineError::EmptySql)?;
        timings.generate_ms = ms(t);

        Ok(Generation {
            sql: SqlStatement {
                text,
                query_id: query.id.clone(),
                knowledge: evidence,
            },
            refined,
            retrieved,
            timings,
        })
    }
}

/// Zero-shot generation for a single query.
pub fn generate_sql(
    query: &Query,
    schema: &DatabaseSchema,
    retriever: &Retriever,
    llm: &LlmClient,
    config: &GenerationConfig,
) -> Result<Generation, PipelineError> {
    Generator {
        retriever: Some(retriever),
        llm,
        examples: None,
        config: config.clone(),
    }
    .generate(query, schema)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// One line of the outputs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub query_id: String,
    pub sql: Option<String>,
    /// The Evidence line used for generation.
    pub knowledge: Option<String>,
    pub retrieved_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// Generates SQL for every record, in input order. A failing record gets an
/// output with `error` set; the run goes on.
pub fn run_pipeline(test: &Dataset, generator: &Generator<'_>) -> Vec<PipelineOutput> {
    parallel_map(&test.records, generator.config.jobs, |_, record| {
        let result = test
            .schema(&record.schema_ref)
            .ok_or_else(|| PipelineError::MissingSchema(record.schema_ref.clone()))
            .and_then(|schema| generator.generate(&record.query, schema));
        match result {
            Ok(g) => PipelineOutput {
                query_id: record.query.id.clone(),
                sql: Some(g.sql.text),
                knowledge: Some(g.sql.knowledge),
                retrieved_ids: g.retrieved.iter().map(|(e, _)| e.id.clone()).collect(),
                error: None,
                timings: generator.config.record_timings.then_some(g.timings),
            },
            Err(e) => {
                log::warn!("query {}: {e}", record.query.id);
                PipelineOutput {
                    query_id: record.query.id.clone(),
                    sql: None,
                    knowledge: None,
                    retrieved_ids: Vec::new(),
                    error: Some(e.to_string()),
                    timings: None,
                }
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OutputsHeader {
    kind: String,
    version: u32,
    config: GenerationConfig,
    lineage: Option<String>,
}

pub struct OutputsFile {
    pub config: GenerationConfig,
    pub lineage: Option<String>,
    pub outputs: Vec<PipelineOutput>,
}

pub fn save_outputs(
    outputs: &[PipelineOutput],
    config: &GenerationConfig,
    lineage: Option<&str>,
    path: &Path,
) -> Result<(), PipelineError> {
    let header = OutputsHeader {
        kind: "katsql-outputs".into(),
        version: 1,
        config: config.clone(),
        lineage: lineage.map(Into::into),
    };
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    for o in outputs {
        text.push_str(&serde_json::to_string(o).expect("output serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_outputs(path: &Path) -> Result<OutputsFile, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse_err = |line: usize, e: serde_json::Error| PipelineError::Parse {
        line: line + 1,
        message: e.to_string(),
    };
    let header: OutputsHeader = match lines.next() {
        Some((n, l)) => serde_json::from_str(l).map_err(|e| parse_err(n, e))?,
        None => {
            return Err(PipelineError::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    if header.kind != "katsql-outputs" {
        return Err(PipelineError::Parse {
            line: 1,
            message: format!("not an outputs file: kind `{}`", header.kind),
        });
    }
    let outputs = lines
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| parse_err(n, e)))
        .collect::<Result<_, _>>()?;
    Ok(OutputsFile {
        config: header.config,
        lineage: header.lineage,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, Split, Table};
    use crate::knowledge_base::KnowledgeBase;
    use crate::llm::{FnBackend, LlmConfig};
    use std::sync::Arc;

    fn schema() -> DatabaseSchema {
        DatabaseSchema {
            db_id: "hr".into(),
            tables: vec![Table {
                name: "location".into(),
                columns: vec![Column {
                    name: "state".into(),
                    col_type: "TEXT".into(),
                    description: None,
                }],
            }],
            foreign_keys: vec![],
            db_file: None,
        }
    }

    fn query(id: &str) -> Query {
        Query {
            id: id.into(),
            text: format!("how many employees are in new york {id}?"),
            db_id: "hr".into(),
        }
    }

    fn scripted() -> LlmClient {
        LlmClient::new(
            LlmConfig::default(),
            Box::new(FnBackend::new("scripted", |p: &str| {
                Ok(if p.ends_with("SQL: ") {
                    "```sql\nSELECT COUNT(*) FROM location WHERE state = 'NY';\n```".to_string()
                } else {
                    "1. New York refers to state = 'NY'\nQuestion: extra".to_string()
                })
            })),
        )
    }

    fn retriever() -> Retriever {
        let mut kb = KnowledgeBase::default();
        kb.insert(KnowledgeEntry::from_dataset("new york refers to state = 'NY'", "hr"));
        kb.insert(KnowledgeEntry::from_dataset("trainee is a position title", "hr"));
        Retriever::build(&kb, Arc::new(crate::retriever::HashEmbedder::new(128).unwrap()), None).unwrap()
    }

    #[test]
    fn completion_to_knowledge() {
        assert_eq!(
            knowledge_from_completion("1) a refers to b\n- Evidence: c is d\n\nQuestion: x\nEvidence: y"),
            "a refers to b; c is d"
        );
    }

    #[test]
    fn refine_and_generate() {
        let llm = scripted();
        let r = retriever();
        let config = GenerationConfig {
            j: 1,
            ..Default::default()
        };
        let g = generate_sql(&query("1"), &schema(), &r, &llm, &config).unwrap();
        assert_eq!(g.sql.text, "SELECT COUNT(*) FROM location WHERE state = 'NY'");
        assert_eq!(g.sql.knowledge, "New York refers to state = 'NY'");
        assert_eq!(llm.ledger().len(), 2);
    }

    #[test]
    fn baseline_skips_retrieval_and_refinement() {
        let llm = scripted();
        let r = retriever();
        let config = GenerationConfig {
            j: 0,
            ..Default::default()
        };
        let g = generate_sql(&query("1"), &schema(), &r, &llm, &config).unwrap();
        assert_eq!(g.sql.knowledge, "");
        assert!(g.retrieved.is_empty());
        assert_eq!(llm.ledger().len(), 1);
    }

    #[test]
    fn refinement_toggle_changes_only_evidence() {
        let r = retriever();
        let prompts = |use_refinement| {
            let llm = scripted();
            let config = GenerationConfig {
                j: 2,
                use_refinement,
                ..Default::default()
            };
            generate_sql(&query("1"), &schema(), &r, &llm, &config).unwrap();
            let ledger = llm.ledger();
            ledger.records().last().unwrap().prompt.clone()
        };
        let on = prompts(true);
        let off = prompts(false);
        let diff: Vec<(&str, &str)> = on.lines().zip(off.lines()).filter(|(a, b)| a != b).collect();
        assert_eq!(diff.len(), 1);
        assert!(diff[0].0.starts_with("Evidence: "));
        assert_eq!(on.lines().count(), off.lines().count());
    }

    #[test]
    fn run_counts_calls_and_records_failures() {
        let r = retriever();
        let llm = scripted();
        let mut test = Dataset {
            records: (1..=3)
                .map(|i| ExampleTriplet {
                    query: query(&i.to_string()),
                    schema_ref: "hr".into(),
                    knowledge: None,
                    gold_sql: None,
                })
                .collect(),
            schemas: [("hr".to_string(), schema())].into_iter().collect(),
            split: Split::Test,
        };
        let generator = Generator {
            retriever: Some(&r),
            llm: &llm,
            examples: None,
            config: GenerationConfig {
                j: 1,
                jobs: 2,
                ..Default::default()
            },
        };
        let out = run_pipeline(&test, &generator);
        assert_eq!(out.len(), 3);
        assert_eq!(llm.ledger().len(), 6);
        assert_eq!(out.iter().map(|o| o.query_id.as_str()).collect::<Vec<_>>(), ["1", "2", "3"]);

        test.records[1].schema_ref = "missing".into();
        let out = run_pipeline(&test, &generator);
        assert!(out[1].error.is_some() && out[1].sql.is_none());
        assert!(run_pipeline(&Dataset::default(), &generator).is_empty());
    }

    #[test]
    fn outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let outputs = vec![PipelineOutput {
            query_id: "1".into(),
            sql: Some("SELECT 1".into()),
            knowledge: Some(String::new()),
            retrieved_ids: vec!["abc".into()],
            error: None,
            timings: None,
        }];
        save_outputs(&outputs, &GenerationConfig::default(), Some("lin"), &path).unwrap();
        let loaded = load_outputs(&path).unwrap();
        assert_eq!(loaded.outputs, outputs);
        assert_eq!(loaded.lineage.as_deref(), Some("lin"));
        assert!(!fs::read_to_string(&path).unwrap().contains("\"timings\""));
    }
}
