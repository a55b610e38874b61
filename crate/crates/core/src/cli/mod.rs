//! The `katsql` command line: argument parsing, configuration resolution and
//! the six commands. `main` only forwards to [`main_with_args`].

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{build_kb, evaluate, generate, retrieve, stats, train_retriever, Context, ENV_API_KEY, ENV_ENDPOINT};
pub use config::{ArtifactPaths, DataConfig, RetrieverConfig, RunConfig, Scenario, Stage};

use crate::llm::BackendKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{} was produced under lineage {found:?}, current configuration is {expected}; rerun the producing command or pass --force", artifact.display())]
    Lineage {
        artifact: PathBuf,
        expected: String,
        found: Option<String>,
    },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Kb(#[from] crate::knowledge_base::KbError),
    #[error(transparent)]
    Retriever(#[from] crate::retriever::RetrieverError),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Stable identifier printed in the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config-validation",
            CliError::MissingArtifact(_) => "missing-artifact",
            CliError::Lineage { .. } => "lineage-mismatch",
            CliError::Dataset(_) => "dataset",
            CliError::Kb(_) => "knowledge-base",
            CliError::Retriever(_) => "retriever",
            CliError::Llm(_) => "llm",
            CliError::Pipeline(_) => "pipeline",
            CliError::Eval(_) => "evaluation",
            CliError::Io(_) => "io",
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({"error": self.kind(), "message": self.to_string()}).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "katsql", version, about = "Knowledge-augmented text-to-SQL: build, retrieve, generate, evaluate")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmFlag {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Configuration file (TOML); default `<workdir>/katsql.toml` if present
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory all configured paths are relative to
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Worker threads for expansion, generation and evaluation
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// LLM backend, overriding `llm.backend`
    #[arg(long, global = true, value_enum)]
    pub llm: Option<LlmFlag>,
    /// Completion fixture for the mock and replay backends
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Seed for sampling, permutation and training
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset scenario
    #[arg(long, global = true, value_enum)]
    pub scenario: Option<Scenario>,
    /// Use artifacts even if their lineage differs from the configuration
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Seed the knowledge base from dataset evidence and expand it with the LLM
    BuildKb {
        /// Expansion rounds per record, overriding `kb.iterations`
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train the retrieval projection head
    TrainRetriever {
        /// Training epochs, overriding `training.epochs`
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the top-j knowledge entries for a question
    Retrieve {
        /// Question text
        query: String,
        /// Entries to return, overriding `generation.j`
        #[arg(short = 'j', long = "top")]
        top: Option<usize>,
    },
    /// Generate SQL for every test record
    Generate {
        /// Put retrieved entries into the Evidence line without refinement
        #[arg(long)]
        no_refinement: bool,
        /// Entries retrieved per question (0 = no knowledge), overriding `generation.j`
        #[arg(short = 'j', long = "top")]
        top: Option<usize>,
    },
    /// Execute and score generated SQL; writes the report
    Evaluate {
        /// Run executions sequentially so timings are undisturbed
        #[arg(long)]
        timing_isolated: bool,
    },
    /// Print knowledge-base entry counts
    Stats,
}

/// Resolves the configuration: file, then flags; environment only for the
/// LLM endpoint (when unset) and API keys.
pub fn resolve(global: &GlobalOpts, command: &Command) -> Result<Context, CliError> {
    let workdir = global.workdir.clone();
    let mut config = match &global.config {
        Some(p) => {
            let path = if p.is_absolute() { p.clone() } else { workdir.join(p) };
            let path = if path.exists() { path } else { p.clone() };
            RunConfig::load(&path).map_err(CliError::Config)?
        }
        None => {
            let default = workdir.join("katsql.toml");
            if default.exists() {
                RunConfig::load(&default).map_err(CliError::Config)?
            } else {
                RunConfig::default()
            }
        }
    };
    if let Some(j) = global.jobs {
        config.jobs = j;
    }
    if let Some(s) = global.seed {
        config.seed = s;
    }
    if let Some(s) = global.scenario {
        config.scenario = s;
    }
    if let Some(b) = global.llm {
        config.llm.backend = match b {
            LlmFlag::Http => BackendKind::Http,
            LlmFlag::Mock => BackendKind::Mock,
            LlmFlag::Replay => BackendKind::Replay,
        };
    }
    if let Some(f) = &global.fixtures {
        let abs = std::path::absolute(f).map_err(|e| CliError::Io(e.to_string()))?;
        config.artifacts.fixtures = Some(abs.to_string_lossy().into_owned());
    }
    match command {
        Command::BuildKb { iterations: Some(n) } => config.kb.iterations = *n,
        Command::TrainRetriever { epochs: Some(n) } => config.training.epochs = *n,
        Command::Generate { no_refinement, top } => {
            if *no_refinement {
                config.generation.use_refinement = false;
            }
            if let Some(j) = top {
                config.generation.j = *j;
            }
        }
        Command::Evaluate { timing_isolated: true } => config.eval.timing_isolated = true,
        _ => {}
    }
    let mut ctx = Context::new(config, workdir)?;
    ctx.force = global.force;
    Ok(ctx)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = resolve(&cli.global, &cli.command)?;
    match &cli.command {
        Command::BuildKb { .. } => {
            let (kb, report) = build_kb(&ctx)?;
            println!("{}", crate::knowledge_base::kb_stats(&kb));
            println!(
                "expansion: {} attempts, {} failures, {} added, {} duplicates",
                report.attempts, report.failures, report.added, report.duplicates
            );
            println!("wrote {}", ctx.path(&ctx.config.artifacts.kb).display());
        }
        Command::TrainRetriever { .. } => {
            let out = train_retriever(&ctx)?;
            println!(
                "held-out MRR {:.4} -> {:.4} (best epoch {}, {} train / {} held-out pairs)",
                out.initial_mrr, out.best_mrr, out.best_epoch, out.train_pairs, out.heldout_pairs
            );
            println!("wrote {}", ctx.path(&ctx.config.artifacts.head).display());
        }
        Command::Retrieve { query, top } => {
            let j = top.unwrap_or(ctx.config.generation.j).max(1);
            for (rank, (entry, score)) in retrieve(&ctx, query, j)?.iter().enumerate() {
                println!("{:>3}  {score:.4}  {}  {}", rank + 1, entry.id, entry.text);
            }
        }
        Command::Generate { .. } => {
            let outputs = generate(&ctx)?;
            let failed = outputs.iter().filter(|o| o.error.is_some()).count();
            println!("generated {} statements ({failed} failed)", outputs.len() - failed);
            println!("wrote {}", ctx.path(&ctx.config.artifacts.outputs).display());
        }
        Command::Evaluate { .. } => {
            let report = evaluate(&ctx)?;
            print!("{report}");
            println!("wrote {}", ctx.path(&ctx.config.artifacts.report).display());
        }
        Command::Stats => print!("{}", stats(&ctx)?),
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
/// Failures print one JSON error line to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            1
        }
    }
}
