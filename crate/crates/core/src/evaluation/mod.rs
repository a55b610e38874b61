//! Execution accuracy, valid efficiency score, knowledge match metrics and
//! knowledge-base coverage.

mod exec;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use exec::{execute_sql, execution_match, has_order_by, Cell, ExecStatus, ExecutionResult, FLOAT_TOLERANCE};

use crate::dataset::{Dataset, ExampleTriplet};
use crate::knowledge_base::{normalize_knowledge, KnowledgeBase};
use crate::pipeline::PipelineOutput;
use crate::retriever::{build_index, EmbeddingProvider, RetrievalMetrics, RetrieverError, TOP_KS};
use crate::util::parallel_map;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("metric over an empty set")]
    EmptySet,
    #[error("non-positive execution time for query {0}")]
    NonPositiveTime(usize),
    #[error("outputs do not align with the test records: {0}")]
    Alignment(String),
    #[error(transparent)]
    Provider(#[from] RetrieverError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// 100 × matches / N.
pub fn compute_ex(matches: &[bool]) -> Result<f64, EvalError> {
    if matches.is_empty() {
        return Err(EvalError::EmptySet);
    }
    Ok(100.0 * matches.iter().filter(|&&m| m).count() as f64 / matches.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesInput {
    pub matched: bool,
    pub t_gold: f64,
    pub t_pred: f64,
}

/// `sqrt(min(t_gold / t_pred, clip_max))` for a match, 0 otherwise.
pub fn ves_term(input: &VesInput, clip_max: f64) -> f64 {
    if !input.matched {
        return 0.0;
    }
    (input.t_gold / input.t_pred).clamp(0.0, clip_max).sqrt()
}

/// `(100 / N) × Σ ves_term`.
pub fn compute_ves(per_query: &[VesInput], clip_max: f64) -> Result<f64, EvalError> {
    if per_query.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut sum = 0.0;
    for (i, q) in per_query.iter().enumerate() {
        if q.matched && !(q.t_gold > 0.0 && q.t_pred > 0.0) {
            return Err(EvalError::NonPositiveTime(i));
        }
        sum += ves_term(q, clip_max);
    }
    Ok(100.0 * sum / per_query.len() as f64)
}

/// Equality after knowledge normalization.
pub fn knowledge_exact_match(generated: &str, gold: &str) -> bool {
    normalize_knowledge(generated) == normalize_knowledge(gold)
}

/// Cosine similarity of the two texts' embeddings.
pub fn knowledge_semantic_similarity(
    generated: &str,
    gold: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, EvalError> {
    let a = provider.embed(generated)?;
    let b = provider.embed(gold)?;
    Ok(crate::retriever::cosine(&a, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub gold_items: usize,
    /// Percent of gold items present in the KB up to normalization.
    pub exact_match: f64,
    /// Mean over gold items of the best cosine against any KB entry.
    pub mean_best_similarity: f64,
}

pub fn kb_coverage(kb: &KnowledgeBase, gold: &[String], provider: &dyn EmbeddingProvider) -> Result<Coverage, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let index = if kb.is_empty() { None } else { Some(build_index(kb, provider, None)?) };
    let mut hits = 0usize;
    let mut ss_sum = 0.0;
    for g in gold {
        if kb.contains_text(g) {
            hits += 1;
        }
        if let Some(index) = &index {
            let q = provider.embed(g)?;
            ss_sum += index.search(&q, 1)?.first().map_or(0.0, |&(_, s)| s);
        }
    }
    Ok(Coverage {
        gold_items: gold.len(),
        exact_match: 100.0 * hits as f64 / gold.len() as f64,
        mean_best_similarity: ss_sum / gold.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimingMode {
    /// Median wall-clock time of repeated runs.
    #[default]
    WallClock,
    /// SQLite VM step counts: deterministic, so reports are byte-stable.
    VmSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub timeout_secs: f64,
    /// Timed executions per query for VES; the median is used.
    pub ves_runs: usize,
    pub ves_clip: f64,
    pub timing: TimingMode,
    pub jobs: usize,
    /// Run every execution sequentially so timings are not disturbed.
    pub timing_isolated: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            timeout_secs: 30.0,
            ves_runs: 3,
            ves_clip: 100.0,
            timing: TimingMode::WallClock,
            jobs: 1,
            timing_isolated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub db_id: String,
    pub ex: bool,
    pub ves_term: f64,
    pub t_gold: Option<f64>,
    pub t_pred: Option<f64>,
    pub pred_status: Option<ExecStatus>,
    pub gold_status: Option<ExecStatus>,
    /// Knowledge metrics, when the record has gold knowledge.
    pub em: Option<bool>,
    pub ss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub ex: f64,
    pub ves: f64,
    pub em: Option<f64>,
    pub ss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: String,
    pub lineage: Option<String>,
    pub config: EvalConfig,
    pub aggregates: Aggregates,
    pub retrieval: Option<RetrievalMetrics>,
    pub coverage: Option<Coverage>,
    pub per_query: Vec<QueryEval>,
}

/// Aggregates from per-query records.
pub fn aggregate(per_query: &[QueryEval]) -> Result<Aggregates, EvalError> {
    let ex = compute_ex(&per_query.iter().map(|q| q.ex).collect::<Vec<_>>())?;
    let ves = 100.0 * per_query.iter().map(|q| q.ves_term).sum::<f64>() / per_query.len() as f64;
    let em: Vec<bool> = per_query.iter().filter_map(|q| q.em).collect();
    let ss: Vec<f64> = per_query.iter().filter_map(|q| q.ss).collect();
    Ok(Aggregates {
        queries: per_query.len(),
        ex,
        ves,
        em: compute_ex(&em).ok(),
        ss: (!ss.is_empty()).then(|| ss.iter().sum::<f64>() / ss.len() as f64),
    })
}

/// Pairs every test record with its output, in record order.
fn align<'a>(outputs: &'a [PipelineOutput], test: &'a Dataset) -> Result<Vec<(&'a ExampleTriplet, &'a PipelineOutput)>, EvalError> {
    if outputs.is_empty() {
        return Err(EvalError::Alignment("no outputs".into()));
    }
    let mut by_id: BTreeMap<&str, &PipelineOutput> = BTreeMap::new();
    for o in outputs {
        if by_id.insert(o.query_id.as_str(), o).is_some() {
            return Err(EvalError::Alignment(format!("duplicate output for query {}", o.query_id)));
        }
    }
    let ids: BTreeSet<&str> = test.records.iter().map(|r| r.id()).collect();
    if let Some(extra) = by_id.keys().find(|id| !ids.contains(*id)) {
        return Err(EvalError::Alignment(format!("output for unknown query {extra}")));
    }
    test.records
        .iter()
        .map(|r| {
            by_id
                .get(r.id())
                .map(|o| (r, *o))
                .ok_or_else(|| EvalError::Alignment(format!("no output for query {}", r.id())))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Cost of one SQL under the configured timing mode.
fn measure(db: &Path, sql: &str, first: &ExecutionResult, config: &EvalConfig) -> f64 {
    match config.timing {
        TimingMode::VmSteps => first.vm_steps.max(1) as f64,
        TimingMode::WallClock => {
            let timeout = Duration::from_secs_f64(config.timeout_secs);
            let runs: Vec<f64> = (0..config.ves_runs.max(1))
                .map(|_| execute_sql(db, sql, timeout).elapsed_secs.max(1e-9))
                .collect();
            median(runs)
        }
    }
}

fn evaluate_one(
    record: &ExampleTriplet,
    output: &PipelineOutput,
    db_file: Option<&Path>,
    config: &EvalConfig,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<QueryEval, EvalError> {
    let mut q = QueryEval {
        query_id: record.id().to_string(),
        db_id: record.schema_ref.clone(),
        ex: false,
        ves_term: 0.0,
        t_gold: None,
        t_pred: None,
        pred_status: None,
        gold_status: None,
        em: None,
        ss: None,
        error: output.error.clone(),
    };

    if let Some(gold_k) = &record.knowledge {
        let generated = output.knowledge.as_deref().unwrap_or("");
        q.em = Some(knowledge_exact_match(generated, gold_k));
        if let Some(p) = provider {
            q.ss = Some(if generated.trim().is_empty() {
                0.0
            } else {
                knowledge_semantic_similarity(generated, gold_k, p)?
            });
        }
    }

    let timeout = Duration::from_secs_f64(config.timeout_secs);
    let (Some(db), Some(gold_sql)) = (db_file, record.gold_sql.as_deref()) else {
        q.error.get_or_insert_with(|| "no database file or gold SQL".into());
        return Ok(q);
    };
    let gold = execute_sql(db, gold_sql, timeout);
    q.gold_status = Some(gold.status);
    if !gold.is_ok() {
        log::warn!("gold SQL of query {} failed: {:?}", record.id(), gold.error);
    }
    let Some(pred_sql) = output.sql.as_deref() else {
        return Ok(q);
    };
    let pred = execute_sql(db, pred_sql, timeout);
    q.pred_status = Some(pred.status);
    q.ex = execution_match(&pred, &gold);
    if q.ex {
        let input = VesInput {
            matched: true,
            t_gold: measure(db, gold_sql, &gold, config),
            t_pred: measure(db, pred_sql, &pred, config),
        };
        q.t_gold = Some(input.t_gold);
        q.t_pred = Some(input.t_pred);
        q.ves_term = ves_term(&input, config.ves_clip);
    }
    Ok(q)
}

/// Executes every prediction against its gold SQL and scores the run.
///
/// Queries on the same database file run sequentially; different files run
/// on up to `config.jobs` threads unless `timing_isolated` is set.
pub fn evaluate_run(
    outputs: &[PipelineOutput],
    test: &Dataset,
    config: &EvalConfig,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<EvalReport, EvalError> {
    let pairs = align(outputs, test)?;
    let db_of = |r: &ExampleTriplet| test.schema(&r.schema_ref).and_then(|s| s.db_file.clone());

    let mut groups: BTreeMap<Option<PathBuf>, Vec<usize>> = BTreeMap::new();
    for (i, (r, _)) in pairs.iter().enumerate() {
        groups.entry(db_of(r)).or_default().push(i);
    }
    let groups: Vec<(Option<PathBuf>, Vec<usize>)> = groups.into_iter().collect();
    let jobs = if config.timing_isolated { 1 } else { config.jobs.max(1) };
    let evaluated = parallel_map(&groups, jobs, |_, (db, idx)| {
        idx.iter()
            .map(|&i| Ok((i, evaluate_one(pairs[i].0, pairs[i].1, db.as_deref(), config, provider)?)))
            .collect::<Result<Vec<_>, EvalError>>()
    });
    let mut slots: Vec<Option<QueryEval>> = vec![None; pairs.len()];
    for group in evaluated {
        for (i, q) in group? {
            slots[i] = Some(q);
        }
    }
    let per_query: Vec<QueryEval> = slots.into_iter().map(|q| q.expect("every query evaluated")).collect();
    Ok(EvalReport {
        setting: String::new(),
        lineage: None,
        config: config.clone(),
        aggregates: aggregate(&per_query)?,
        retrieval: None,
        coverage: None,
        per_query,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_json()).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let io = |e: String| EvalError::Io {
            path: path.display().to_string(),
            message: e,
        };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

/// One row per setting: EX, VES, then knowledge and retrieval columns.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
        let a = &self.aggregates;
        let w = self.setting.len().max(16);
        let mut header = format!("{:<w$} {:>7} {:>7} {:>7} {:>7} {:>7}", "setting", "queries", "EX", "VES", "EM", "SS");
        let mut row = format!(
            "{:<w$} {:>7} {:>7.2} {:>7.2} {:>7} {:>7}",
            if self.setting.is_empty() { "-" } else { &self.setting },
            a.queries,
            a.ex,
            a.ves,
            opt(a.em, 2),
            opt(a.ss.map(|s| 100.0 * s), 2),
        );
        if let Some(r) = &self.retrieval {
            header.push_str(&format!(" {:>7}", "MRR"));
            row.push_str(&format!(" {:>7.4}", r.mrr));
            for k in TOP_KS {
                header.push_str(&format!(" {:>7}", format!("Top@{k}")));
                row.push_str(&format!(" {:>7}", opt(r.top_k.get(&k).copied(), 4)));
            }
        }
        writeln!(f, "{header}")?;
        writeln!(f, "{row}")?;
        if let Some(c) = &self.coverage {
            writeln!(
                f,
                "kb coverage: exact match {:.2}% over {} gold items, mean best similarity {:.4}",
                c.exact_match, c.gold_items, c.mean_best_similarity
            )?;
        }
        Ok(())
    }
}
