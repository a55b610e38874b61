//! Embedding providers.
//!
//! The deterministic hash backend builds a signed bag-of-tokens vector:
//!
//! 1. lowercase the text (Unicode lowercase);
//! 2. split it into tokens, the maximal runs of alphanumeric characters; a
//!    text with no such run is one token, its trimmed lowercase form;
//! 3. for each token occurrence take `d = SHA-256(token as UTF-8)`, add
//!    `+1` (if `d[8]` is even) or `-1` (if odd) at index
//!    `u64::from_le_bytes(d[0..8]) % dim`;
//! 4. divide by the L2 norm. If every component cancelled to zero, the
//!    vector is instead the unit vector at the bucket of the whole trimmed
//!    lowercase text, with that text's sign.
//!
//! Texts whose tokens land in disjoint buckets are exactly orthogonal.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ProjectionHead, RetrieverError};

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Returns an L2-normalized vector of length [`dim`](Self::dim).
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrieverError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrieverError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    /// Identifies the provider and its output space; indexes and heads record it.
    fn fingerprint(&self) -> String {
        format!("{}:{}", self.name(), self.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingBackend {
    HttpService,
    #[default]
    DeterministicHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackend,
    pub dim: usize,
    pub model: String,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            backend: EmbeddingBackend::DeterministicHash,
            dim: 256,
            model: "all-mpnet-base-v2".into(),
            endpoint: None,
            timeout_secs: 60,
        }
    }
}

pub fn provider_from_config(
    config: &EmbeddingConfig,
    api_key: Option<String>,
) -> Result<Box<dyn EmbeddingProvider>, RetrieverError> {
    match config.backend {
        EmbeddingBackend::DeterministicHash => Ok(Box::new(HashEmbedder::new(config.dim)?)),
        EmbeddingBackend::HttpService => Ok(Box::new(HttpEmbedder::new(config, api_key)?)),
    }
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, RetrieverError> {
        if dim == 0 {
            return Err(RetrieverError::Config("embedding dim must be >= 1".into()));
        }
        Ok(HashEmbedder { dim })
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let d = Sha256::digest(token.as_bytes());
        let idx = u64::from_le_bytes(d[..8].try_into().unwrap()) % self.dim as u64;
        let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        (idx as usize, sign)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrieverError> {
        if text.trim().is_empty() {
            return Err(RetrieverError::EmptyText);
        }
        let whole = text.trim().to_lowercase();
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(whole.clone());
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            let (i, s) = self.bucket(t);
            v[i] += s;
        }
        if v.iter().all(|x| *x == 0.0) {
            let (i, s) = self.bucket(&whole);
            v[i] = s;
        }
        l2_normalize(&mut v);
        Ok(v)
    }
}

/// OpenAI-compatible `POST {endpoint}/embeddings`.
pub struct HttpEmbedder {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(config: &EmbeddingConfig, api_key: Option<String>) -> Result<Self, RetrieverError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| RetrieverError::Config("http embedding backend needs an endpoint".into()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| RetrieverError::Provider(e.to_string()))?;
        Ok(HttpEmbedder {
            http,
            url: format!("{}/embeddings", endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            dim: config.dim,
            api_key: api_key.filter(|k| !k.is_empty()),
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrieverError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrieverError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(RetrieverError::EmptyText);
        }
        let mut req = self
            .http
            .post(&self.url)
            .json(&serde_json::json!({"model": self.model, "input": texts}));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| RetrieverError::Provider(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RetrieverError::Provider(format!("http status {}", resp.status())));
        }
        let mut parsed: EmbeddingResponse = resp.json().map_err(|e| RetrieverError::Provider(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(RetrieverError::Provider(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|d| d.index.unwrap_or(0));
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(RetrieverError::DimensionMismatch {
                        expected: self.dim,
                        got: d.embedding.len(),
                    });
                }
                let mut v = d.embedding;
                l2_normalize(&mut v);
                Ok(v)
            })
            .collect()
    }
}

/// Embeds `text` and, when a head is given, projects it.
pub fn embed(
    provider: &dyn EmbeddingProvider,
    head: Option<&ProjectionHead>,
    text: &str,
) -> Result<Vec<f64>, RetrieverError> {
    let v = provider.embed(text)?;
    match head {
        Some(h) => h.project(&v),
        None => Ok(v),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length; a zero vector stays zero.
pub fn l2_normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent re-derivation of the documented recipe for one-token texts.
    fn recipe(token: &str, dim: usize) -> Vec<f64> {
        let digest = Sha256::digest(token.as_bytes());
        let mut idx: u64 = 0;
        for (k, b) in digest[..8].iter().enumerate() {
            idx |= (*b as u64) << (8 * k);
        }
        let mut v = vec![0.0; dim];
        v[(idx % dim as u64) as usize] = if digest[8] % 2 == 0 { 1.0 } else { -1.0 };
        v
    }

    #[test]
    fn single_token_matches_recipe() {
        let e = HashEmbedder::new(8).unwrap();
        assert_eq!(e.embed("a").unwrap(), recipe("a", 8));
        assert_eq!(e.embed("  A ").unwrap(), recipe("a", 8));
    }

    #[test]
    fn deterministic_and_unit_length() {
        let e = HashEmbedder::new(64).unwrap();
        let a = e.embed("New York refers to state = 'NY'").unwrap();
        assert_eq!(a, e.embed("New York refers to state = 'NY'").unwrap());
        assert!((norm(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn punctuation_only_text_still_embeds() {
        let e = HashEmbedder::new(16).unwrap();
        let v = e.embed("?!").unwrap();
        assert!((norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_rejected() {
        let e = HashEmbedder::new(16).unwrap();
        assert!(matches!(e.embed("  "), Err(RetrieverError::EmptyText)));
    }

    #[test]
    fn head_changes_output_dim() {
        let e = HashEmbedder::new(8).unwrap();
        let head = ProjectionHead::random(8, 3, 0.05, 1);
        let v = embed(&e, Some(&head), "albumin").unwrap();
        assert_eq!(v.len(), 3);
        assert!((norm(&v) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn always_unit_norm(text in "\\PC{1,40}", dim in 1usize..64) {
            prop_assume!(!text.trim().is_empty());
            let v = HashEmbedder::new(dim).unwrap().embed(&text).unwrap();
            prop_assert_eq!(v.len(), dim);
            prop_assert!((norm(&v) - 1.0).abs() < 1e-6);
        }
    }
}
