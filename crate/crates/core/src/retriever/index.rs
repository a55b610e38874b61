//! Flat full-scan index: one unit-length row per knowledge entry.

use std::cmp::Ordering;
use std::sync::Arc;

use super::{dot, embed, l2_normalize, EmbeddingProvider, ProjectionHead, RetrieverError};
use crate::knowledge_base::{KnowledgeBase, KnowledgeEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    entries: Vec<KnowledgeEntry>,
    dim: usize,
    rows: Vec<f64>,
    pub provider_fingerprint: String,
    pub head_fingerprint: Option<String>,
}

impl KnowledgeIndex {
    /// Index over arbitrary vectors; each row is scaled to unit length.
    pub fn from_vectors(
        entries: Vec<KnowledgeEntry>,
        vectors: Vec<Vec<f64>>,
        provider_fingerprint: String,
        head_fingerprint: Option<String>,
    ) -> Result<Self, RetrieverError> {
        if entries.is_empty() {
            return Err(RetrieverError::EmptyKb);
        }
        if entries.len() != vectors.len() {
            return Err(RetrieverError::Config(format!(
                "{} entries but {} vectors",
                entries.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        let mut rows = Vec::with_capacity(dim * vectors.len());
        for mut v in vectors {
            if v.len() != dim {
                return Err(RetrieverError::DimensionMismatch { expected: dim, got: v.len() });
            }
            l2_normalize(&mut v);
            rows.extend(v);
        }
        Ok(KnowledgeIndex {
            entries,
            dim,
            rows,
            provider_fingerprint,
            head_fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    /// Top `j` rows by dot product with `query`, score descending, ties by
    /// entry id ascending.
    pub fn search(&self, query: &[f64], j: usize) -> Result<Vec<(usize, f64)>, RetrieverError> {
        if query.len() != self.dim {
            return Err(RetrieverError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len()).map(|i| (i, dot(self.row(i), query))).collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        };
        let j = j.min(scored.len());
        if j == 0 {
            return Ok(Vec::new());
        }
        if j < scored.len() {
            scored.select_nth_unstable_by(j - 1, cmp);
            scored.truncate(j);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored)
    }
}

/// Embeds every entry of `kb` (in id order) and indexes the vectors.
pub fn build_index(
    kb: &KnowledgeBase,
    provider: &dyn EmbeddingProvider,
    head: Option<&ProjectionHead>,
) -> Result<KnowledgeIndex, RetrieverError> {
    if kb.is_empty() {
        return Err(RetrieverError::EmptyKb);
    }
    let entries: Vec<KnowledgeEntry> = kb.entries().cloned().collect();
    let texts: Vec<&str> = entries.iter().map(|e| e.text.as_str()).collect();
    let mut vectors = provider.embed_batch(&texts)?;
    if let Some(h) = head {
        vectors = vectors.iter().map(|v| h.project(v)).collect::<Result<_, _>>()?;
    }
    KnowledgeIndex::from_vectors(
        entries,
        vectors,
        provider.fingerprint(),
        head.map(ProjectionHead::fingerprint),
    )
}

/// Top `j` entries for `query` with their cosine scores.
pub fn retrieve(
    query: &str,
    index: &KnowledgeIndex,
    j: usize,
    provider: &dyn EmbeddingProvider,
    head: Option<&ProjectionHead>,
) -> Result<Vec<(KnowledgeEntry, f64)>, RetrieverError> {
    if j == 0 {
        return Err(RetrieverError::Config("j must be >= 1".into()));
    }
    check_fingerprints(index, provider, head)?;
    let q = embed(provider, head, query)?;
    Ok(index
        .search(&q, j)?
        .into_iter()
        .map(|(i, s)| (index.entries[i].clone(), s))
        .collect())
}

/// Full ranking of the index for a query vector: entry positions in rank order.
pub fn rank_vector(index: &KnowledgeIndex, query: &[f64]) -> Result<Vec<usize>, RetrieverError> {
    Ok(index.search(query, index.len())?.into_iter().map(|(i, _)| i).collect())
}

fn check_fingerprints(
    index: &KnowledgeIndex,
    provider: &dyn EmbeddingProvider,
    head: Option<&ProjectionHead>,
) -> Result<(), RetrieverError> {
    let used = provider.fingerprint();
    if used != index.provider_fingerprint {
        return Err(RetrieverError::FingerprintMismatch {
            built: index.provider_fingerprint.clone(),
            used,
        });
    }
    let used_head = head.map(ProjectionHead::fingerprint);
    if used_head != index.head_fingerprint {
        return Err(RetrieverError::FingerprintMismatch {
            built: index.head_fingerprint.clone().unwrap_or_else(|| "no head".into()),
            used: used_head.unwrap_or_else(|| "no head".into()),
        });
    }
    Ok(())
}

/// Provider, optional head and the index built from them. Immutable and
/// shareable across threads.
#[derive(Clone)]
pub struct Retriever {
    provider: Arc<dyn EmbeddingProvider>,
    head: Option<ProjectionHead>,
    index: KnowledgeIndex,
}

impl Retriever {
    pub fn build(
        kb: &KnowledgeBase,
        provider: Arc<dyn EmbeddingProvider>,
        head: Option<ProjectionHead>,
    ) -> Result<Self, RetrieverError> {
        let index = build_index(kb, provider.as_ref(), head.as_ref())?;
        Ok(Retriever { provider, head, index })
    }

    pub fn new(
        index: KnowledgeIndex,
        provider: Arc<dyn EmbeddingProvider>,
        head: Option<ProjectionHead>,
    ) -> Result<Self, RetrieverError> {
        check_fingerprints(&index, provider.as_ref(), head.as_ref())?;
        Ok(Retriever { provider, head, index })
    }

    pub fn index(&self) -> &KnowledgeIndex {
        &self.index
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    pub fn head(&self) -> Option<&ProjectionHead> {
        self.head.as_ref()
    }

    pub fn embed_query(&self, query: &str) -> Result<Vec<f64>, RetrieverError> {
        embed(self.provider.as_ref(), self.head.as_ref(), query)
    }

    pub fn retrieve(&self, query: &str, j: usize) -> Result<Vec<(KnowledgeEntry, f64)>, RetrieverError> {
        retrieve(query, &self.index, j, self.provider.as_ref(), self.head.as_ref())
    }

    pub fn rank_all(&self, query: &str) -> Result<Vec<usize>, RetrieverError> {
        rank_vector(&self.index, &self.embed_query(query)?)
    }
}
