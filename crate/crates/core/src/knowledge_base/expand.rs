//! Iterative expansion with resampled, permuted few-shot examples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExampleSelector, KbBuildConfig, KbError, KnowledgeBase, KnowledgeEntry};
use crate::dataset::{Dataset, ExampleTriplet};
use crate::llm::LlmClient;
use crate::pipeline::PromptTemplate;
use crate::retriever::EmbeddingProvider;
use crate::util::{derive_seed, parallel_map};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExpansionReport {
    /// Prompts attempted: samples × iterations.
    pub attempts: usize,
    pub llm_calls: usize,
    /// Attempts skipped because of an LLM, budget or selection error.
    pub failures: usize,
    pub added: usize,
    pub duplicates: usize,
    /// Completion lines dropped as too short.
    pub rejected_lines: usize,
}

/// Removes a leading list marker such as `1.`, `2)`, `(3)`, `-`, `*` or `•`.
pub fn strip_list_marker(line: &str) -> &str {
    let t = line.trim_start();
    for bullet in ["-", "*", "•"] {
        if let Some(rest) = t.strip_prefix(bullet) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    let inner = t.strip_prefix('(').unwrap_or(t);
    let digits = inner.len() - inner.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &inner[digits..];
        let closer = if t.starts_with('(') { &[')'][..] } else { &['.', ')'][..] };
        if let Some(rest) = rest.strip_prefix(closer) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    t
}

/// Splits a completion into knowledge lines: list markers and `Evidence:`
/// labels removed, lines under `min_words` words dropped. Reading stops at a
/// line that opens a new `Question:` block. Returns (kept, rejected count).
pub fn parse_completion(completion: &str, min_words: usize) -> (Vec<String>, usize) {
    let mut kept = Vec::new();
    let mut rejected = 0;
    for raw in completion.lines() {
        let line = raw.trim();
        if line.starts_with("Question:") {
            break;
        }
        let line = strip_list_marker(line);
        let line = line.strip_prefix("Evidence:").unwrap_or(line).trim();
        if line.is_empty() {
            continue;
        }
        if line.split_whitespace().count() < min_words {
            rejected += 1;
        } else {
            kept.push(line.to_string());
        }
    }
    (kept, rejected)
}

/// Runs `config.iterations` generation rounds for every record of
/// `dataset` and inserts the new lines into `kb`.
///
/// Each round samples `few_shot_k` examples without replacement from the
/// `2 * few_shot_k` most similar records and shuffles them, seeded by
/// `(config.seed, record id, round)`. Prompts may run concurrently
/// (`config.jobs`); results are inserted in record/round order, so the
/// output does not depend on scheduling.
pub fn expand_kb(
    mut kb: KnowledgeBase,
    dataset: &Dataset,
    llm: &LlmClient,
    config: &KbBuildConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<(KnowledgeBase, ExpansionReport), KbError> {
    config.validate()?;
    kb.build_config = config.clone();
    let mut report = ExpansionReport::default();
    if config.iterations == 0 || dataset.records.is_empty() {
        return Ok((kb, report));
    }
    let selector = ExampleSelector::new(dataset, embedder, false)?;
    if selector.is_empty() {
        return Err(KbError::InsufficientExamples);
    }

    let tasks: Vec<(&ExampleTriplet, usize)> = dataset
        .records
        .iter()
        .flat_map(|r| (1..=config.iterations).map(move |i| (r, i)))
        .collect();
    let pools: Vec<Result<Vec<ExampleTriplet>, KbError>> = parallel_map(&dataset.records, config.jobs, |_, r| {
        Ok(selector
            .select(&r.query, 2 * config.few_shot_k, embedder)?
            .into_iter()
            .map(|s| s.record)
            .collect())
    });

    let results: Vec<Result<Option<String>, String>> = parallel_map(&tasks, config.jobs, |t, &(record, i)| {
        let pool = pools[t / config.iterations].as_ref().map_err(|e| e.to_string())?;
        let schema = dataset
            .schema(&record.schema_ref)
            .ok_or_else(|| format!("no schema for `{}`", record.schema_ref))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[record.id(), &i.to_string()]));
        let mut sample: Vec<ExampleTriplet> = pool
            .choose_multiple(&mut rng, config.few_shot_k.min(pool.len()))
            .cloned()
            .collect();
        sample.shuffle(&mut rng);
        let prompt = PromptTemplate::knowledge(&record.query, schema, &sample)
            .with_focus(record.gold_sql.as_deref())
            .render(config.prompt_budget)
            .map_err(|e| e.to_string())?;
        llm.complete(&prompt).map(Some).map_err(|e| e.to_string())
    });

    for (&(record, i), result) in tasks.iter().zip(results) {
        report.attempts += 1;
        match result {
            Ok(Some(completion)) => {
                report.llm_calls += 1;
                let (lines, rejected) = parse_completion(&completion, config.min_words);
                report.rejected_lines += rejected;
                for line in lines {
                    if kb.insert(KnowledgeEntry::generated(&line, &record.schema_ref, record.id(), i)) {
                        report.added += 1;
                    } else {
                        report.duplicates += 1;
                    }
                }
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("record {} iteration {i}: {e}", record.id());
                report.failures += 1;
            }
        }
    }
    Ok((kb, report))
}
