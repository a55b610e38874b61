//! Command implementations over a resolved [`Context`].

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::{RunConfig, Scenario, Stage};
use super::CliError;
use crate::dataset::{load_dataset, Dataset, Split};
use crate::evaluation::{evaluate_run, kb_coverage, EvalReport};
use crate::knowledge_base::{
    expand_kb, init_kb, kb_stats, load_kb, save_kb, ExampleSelector, ExpansionReport, KnowledgeBase, KnowledgeEntry,
    StatsReport,
};
use crate::llm::{BackendKind, CallLedger, LlmBackend, LlmClient};
use crate::pipeline::{load_outputs, run_pipeline, save_outputs, Generator, PipelineOutput};
use crate::retriever::{
    eval_retrieval, load_labeled, provider_from_config, train_head, training_pairs, EmbeddingProvider, LabeledQuery,
    ProjectionHead, Retriever, TrainOutcome,
};

pub const ENV_ENDPOINT: &str = "KATSQL_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "KATSQL_LLM_API_KEY";

type BackendFactory = Box<dyn Fn() -> Box<dyn LlmBackend> + Send + Sync>;

/// A resolved configuration plus the directory every path is relative to.
pub struct Context {
    pub config: RunConfig,
    pub workdir: PathBuf,
    /// Accept artifacts whose lineage differs from the current configuration.
    pub force: bool,
    backend: Option<BackendFactory>,
}

impl Context {
    pub fn new(mut config: RunConfig, workdir: impl Into<PathBuf>) -> Result<Self, CliError> {
        if config.llm.endpoint.is_none() {
            config.llm.endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty());
        }
        config.propagate();
        config.validate().map_err(CliError::Config)?;
        Ok(Context {
            config,
            workdir: workdir.into(),
            force: false,
            backend: None,
        })
    }

    /// Uses completions from `factory` instead of the configured backend.
    /// Lineage hashes still describe the configured backend.
    pub fn with_backend(mut self, factory: impl Fn() -> Box<dyn LlmBackend> + Send + Sync + 'static) -> Self {
        self.backend = Some(Box::new(factory));
        self
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.workdir.join(rel)
    }

    fn existing(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact(p))
        }
    }

    pub fn llm_client(&self) -> Result<LlmClient, CliError> {
        if let Some(factory) = &self.backend {
            return Ok(LlmClient::new(self.config.llm.clone(), factory()));
        }
        let fixture = match self.config.llm.backend {
            BackendKind::Http => None,
            _ => {
                let rel = self
                    .config
                    .artifacts
                    .fixtures
                    .as_deref()
                    .ok_or_else(|| CliError::Config("mock and replay backends need artifacts.fixtures or --fixtures".into()))?;
                Some(self.existing(rel)?)
            }
        };
        let key = std::env::var(super::commands::ENV_API_KEY).ok();
        Ok(LlmClient::from_config(self.config.llm.clone(), fixture.as_deref(), key)?)
    }

    pub fn embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
        let key = std::env::var(ENV_API_KEY).ok();
        Ok(Arc::from(provider_from_config(&self.config.embedding, key)?))
    }

    fn load(&self, rel: &str, format: crate::dataset::DatasetFormat, split: Split) -> Result<Dataset, CliError> {
        let path = self.existing(rel)?;
        Ok(load_dataset(&path, format)?.with_split(split))
    }

    pub fn test_dataset(&self) -> Result<Dataset, CliError> {
        self.load(&self.config.data.test, self.config.data.format, Split::Test)
    }

    /// Records that feed the knowledge base, training and few-shot examples
    /// under the configured scenario.
    pub fn source_dataset(&self) -> Result<Dataset, CliError> {
        let data = &self.config.data;
        match self.config.scenario {
            Scenario::Overlap => self.load(&data.train, data.format, Split::Train),
            Scenario::NonOverlap => {
                let train = self.load(&data.train, data.format, Split::Train)?;
                let test = self.test_dataset()?;
                let test_dbs: BTreeSet<&str> = test.db_ids();
                Ok(train.filtered(|r| !test_dbs.contains(r.schema_ref.as_str())))
            }
            Scenario::CrossDataset => {
                let rel = data.kb_source.as_deref().expect("validated");
                self.load(rel, data.kb_source_format, Split::Train)
            }
        }
    }

    fn check_lineage(&self, artifact: &Path, found: Option<&str>, stage: Stage) -> Result<(), CliError> {
        self.check_lineage_as(&self.config, artifact, found, stage)
    }

    fn check_lineage_as(
        &self,
        config: &RunConfig,
        artifact: &Path,
        found: Option<&str>,
        stage: Stage,
    ) -> Result<(), CliError> {
        let expected = config.lineage(stage);
        if found == Some(expected.as_str()) {
            return Ok(());
        }
        if self.force {
            log::warn!("{}: lineage {:?} differs from {expected}; continuing (--force)", artifact.display(), found);
            return Ok(());
        }
        Err(CliError::Lineage {
            artifact: artifact.to_path_buf(),
            expected,
            found: found.map(Into::into),
        })
    }

    fn save_ledger(&self, ledger: &CallLedger, name: &str) -> Result<(), CliError> {
        let dir = self.path(&self.config.artifacts.ledgers);
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        ledger.save(&dir.join(format!("{name}.jsonl")))?;
        Ok(())
    }

    pub fn load_kb(&self) -> Result<KnowledgeBase, CliError> {
        let path = self.existing(&self.config.artifacts.kb)?;
        let kb = load_kb(&path)?;
        self.check_lineage(&path, kb.lineage.as_deref(), Stage::Kb)?;
        Ok(kb)
    }

    pub fn load_head(&self) -> Result<Option<ProjectionHead>, CliError> {
        if !self.config.retriever.use_head {
            return Ok(None);
        }
        let path = self.existing(&self.config.artifacts.head)?;
        let head = ProjectionHead::load(&path)?;
        self.check_lineage(&path, head.lineage.as_deref(), Stage::Retriever)?;
        Ok(Some(head))
    }

    pub fn retriever(&self) -> Result<Retriever, CliError> {
        let kb = self.load_kb()?;
        let head = self.load_head()?;
        Ok(Retriever::build(&kb, self.embedder()?, head)?)
    }
}

pub fn build_kb(ctx: &Context) -> Result<(KnowledgeBase, ExpansionReport), CliError> {
    let config = &ctx.config;
    let source = match config.kb.split {
        Split::Train => ctx.source_dataset()?,
        Split::Test => ctx.test_dataset()?,
    };
    let kb = init_kb(&source, config.kb.clone());
    let (mut kb, report) = if config.kb.iterations == 0 {
        (kb, ExpansionReport::default())
    } else {
        let llm = ctx.llm_client()?;
        let embedder = ctx.embedder()?;
        let out = expand_kb(kb, &source, &llm, &config.kb, embedder.as_ref())?;
        ctx.save_ledger(&llm.take_ledger(), "build-kb")?;
        out
    };
    kb.lineage = Some(config.lineage(Stage::Kb));
    save_kb(&kb, &ctx.path(&config.artifacts.kb))?;
    Ok((kb, report))
}

pub fn train_retriever(ctx: &Context) -> Result<TrainOutcome, CliError> {
    let source = ctx.source_dataset()?;
    let pairs = training_pairs(&source);
    let embedder = ctx.embedder()?;
    let mut outcome = train_head(&pairs, embedder.as_ref(), &ctx.config.training)?;
    outcome.head.lineage = Some(ctx.config.lineage(Stage::Retriever));
    outcome.head.save(&ctx.path(&ctx.config.artifacts.head))?;
    Ok(outcome)
}

pub fn retrieve(ctx: &Context, query: &str, j: usize) -> Result<Vec<(KnowledgeEntry, f64)>, CliError> {
    Ok(ctx.retriever()?.retrieve(query, j)?)
}

pub fn generate(ctx: &Context) -> Result<Vec<PipelineOutput>, CliError> {
    let test = ctx.test_dataset()?;
    let retriever = ctx.retriever()?;
    let source = ctx.source_dataset()?;
    let selector = ExampleSelector::new(&source, retriever.provider(), true)?;
    let llm = ctx.llm_client()?;
    let generator = Generator {
        retriever: Some(&retriever),
        llm: &llm,
        examples: Some(&selector),
        config: ctx.config.generation.clone(),
    };
    let outputs = run_pipeline(&test, &generator);
    save_outputs(
        &outputs,
        &ctx.config.generation,
        Some(&ctx.config.lineage(Stage::Generation)),
        &ctx.path(&ctx.config.artifacts.outputs),
    )?;
    ctx.save_ledger(&llm.take_ledger(), "generate")?;
    Ok(outputs)
}

pub fn evaluate(ctx: &Context) -> Result<EvalReport, CliError> {
    let outputs_path = ctx.existing(&ctx.config.artifacts.outputs)?;
    let outputs = load_outputs(&outputs_path)?;
    // Generation flags (`--top`, `--no-refinement`) travel in the outputs
    // header; everything upstream must still match the configuration.
    let mut produced = ctx.config.clone();
    produced.generation = outputs.config.clone();
    ctx.check_lineage_as(&produced, &outputs_path, outputs.lineage.as_deref(), Stage::Generation)?;
    let test = ctx.test_dataset()?;
    let embedder = ctx.embedder()?;
    let mut report = evaluate_run(&outputs.outputs, &test, &ctx.config.eval, Some(embedder.as_ref()))?;

    let kb = ctx.load_kb()?;
    let retriever = Retriever::build(&kb, embedder.clone(), ctx.load_head()?)?;
    let labeled: Vec<LabeledQuery> = match &ctx.config.retriever.labeled {
        Some(rel) => load_labeled(&ctx.existing(rel)?)?,
        None => test
            .records
            .iter()
            .filter_map(|r| r.knowledge.as_ref().map(|k| (r, k)))
            .filter(|(_, k)| kb.contains_text(k))
            .map(|(r, k)| LabeledQuery {
                query: r.query.text.clone(),
                relevant_ids: Vec::new(),
                relevant_texts: vec![k.clone()],
            })
            .collect(),
    };
    if !labeled.is_empty() {
        report.retrieval = Some(eval_retrieval(&retriever, &labeled)?);
    }
    let gold: Vec<String> = test
        .records
        .iter()
        .filter_map(|r| r.knowledge.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !gold.is_empty() {
        report.coverage = Some(kb_coverage(&kb, &gold, embedder.as_ref())?);
    }
    let scenario = ctx.config.scenario.name();
    report.setting = if produced.generation.j == 0 {
        format!("{scenario}/no-knowledge")
    } else if !produced.generation.use_refinement {
        format!("{scenario}/no-refinement")
    } else {
        scenario.to_string()
    };
    report.lineage = Some(produced.lineage(Stage::Generation));
    report.save(&ctx.path(&ctx.config.artifacts.report))?;
    Ok(report)
}

pub fn stats(ctx: &Context) -> Result<StatsReport, CliError> {
    Ok(kb_stats(&ctx.load_kb()?))
}
