//! MRR and Top@K over full rankings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Retriever, RetrieverError};
use crate::knowledge_base::entry_id;

pub const TOP_KS: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub queries: usize,
    pub mrr: f64,
    /// K → fraction of queries with a relevant entry in the first K.
    pub top_k: BTreeMap<usize, f64>,
}

/// A query with the ids of the entries that answer it. Lines of a labeled
/// set file carry either `relevant_ids` or `relevant_texts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    #[serde(default)]
    pub relevant_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relevant_texts: Vec<String>,
}

impl LabeledQuery {
    pub fn relevant(&self) -> Vec<String> {
        let mut ids = self.relevant_ids.clone();
        ids.extend(self.relevant_texts.iter().map(|t| entry_id(t)));
        ids
    }
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledQuery>, RetrieverError> {
    let text = fs::read_to_string(path).map_err(|e| RetrieverError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| RetrieverError::Parse(format!("{} line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Mean of `1 / rank` over 1-based ranks.
pub fn mean_reciprocal_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Fraction of 1-based ranks that are `<= k`.
pub fn top_k_accuracy(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Ranks the whole index for each query and scores the first relevant hit.
pub fn eval_retrieval(retriever: &Retriever, labeled: &[LabeledQuery]) -> Result<RetrievalMetrics, RetrieverError> {
    if labeled.is_empty() {
        return Err(RetrieverError::EmptyEvalSet);
    }
    let index = retriever.index();
    let mut ranks = Vec::with_capacity(labeled.len());
    for q in labeled {
        let relevant = q.relevant();
        if relevant.is_empty() {
            return Err(RetrieverError::Config(format!("query `{}` has no relevant entries", q.query)));
        }
        let mut positions = Vec::with_capacity(relevant.len());
        for id in &relevant {
            positions.push(index.position(id).ok_or_else(|| RetrieverError::UnknownEntry(id.clone()))?);
        }
        let ranking = retriever.rank_all(&q.query)?;
        let rank = ranking
            .iter()
            .position(|p| positions.contains(p))
            .expect("full ranking contains every entry")
            + 1;
        ranks.push(rank);
    }
    Ok(metrics_from_ranks(&ranks))
}

pub(crate) fn metrics_from_ranks(ranks: &[usize]) -> RetrievalMetrics {
    RetrievalMetrics {
        queries: ranks.len(),
        mrr: mean_reciprocal_rank(ranks),
        top_k: TOP_KS.iter().map(|&k| (k, top_k_accuracy(ranks, k))).collect(),
    }
}
