//! Few-shot example selection by question similarity.

use std::cmp::Ordering;

use super::KbError;
use crate::dataset::{Dataset, ExampleTriplet, Query};
use crate::retriever::{dot, EmbeddingProvider};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub record: ExampleTriplet,
    pub score: f64,
}

/// Pre-embedded candidate pool: the records that carry knowledge (and, when
/// required, gold SQL).
pub struct ExampleSelector {
    candidates: Vec<ExampleTriplet>,
    vectors: Vec<Vec<f64>>,
}

impl ExampleSelector {
    pub fn new(dataset: &Dataset, embedder: &dyn EmbeddingProvider, require_sql: bool) -> Result<Self, KbError> {
        let candidates: Vec<ExampleTriplet> = dataset
            .records
            .iter()
            .filter(|r| r.knowledge.is_some() && (!require_sql || r.gold_sql.is_some()))
            .cloned()
            .collect();
        let texts: Vec<&str> = candidates.iter().map(|r| r.query.text.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        Ok(ExampleSelector { candidates, vectors })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// The `k` candidates most similar to `query`, best first; ties go to
    /// the smaller record id. The record with the query's own id is skipped.
    pub fn select(&self, query: &Query, k: usize, embedder: &dyn EmbeddingProvider) -> Result<Vec<ScoredExample>, KbError> {
        if k == 0 {
            return Err(KbError::Config("k must be >= 1".into()));
        }
        let q = embedder.embed(&query.text)?;
        let mut scored: Vec<(usize, f64)> = self
            .candidates
            .iter()
            .zip(&self.vectors)
            .enumerate()
            .filter(|(_, (r, _))| r.query.id != query.id)
            .map(|(i, (_, v))| (i, dot(&q, v)))
            .collect();
        if scored.is_empty() {
            return Err(KbError::InsufficientExamples);
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.candidates[a.0].query.id.cmp(&self.candidates[b.0].query.id))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, score)| ScoredExample {
                record: self.candidates[i].clone(),
                score,
            })
            .collect())
    }
}

/// One-off selection over `dataset`; see [`ExampleSelector::select`].
pub fn select_examples(
    query: &Query,
    dataset: &Dataset,
    k: usize,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<ExampleTriplet>, KbError> {
    let selector = ExampleSelector::new(dataset, embedder, false)?;
    Ok(selector.select(query, k, embedder)?.into_iter().map(|s| s.record).collect())
}
