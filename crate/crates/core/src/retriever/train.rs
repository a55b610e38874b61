//! Contrastive training of the projection head with Adam.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::mean_reciprocal_rank;
use super::{batch_loss_and_grad, rank_vector, EmbeddingProvider, EncodedPair, KnowledgeIndex, ProjectionHead, RetrieverError};
use crate::dataset::Dataset;
use crate::knowledge_base::{normalize_knowledge, KnowledgeEntry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: String,
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
}

/// (question, evidence) pairs from every record that has evidence.
pub fn training_pairs(dataset: &Dataset) -> Vec<TrainingPair> {
    dataset
        .records
        .iter()
        .filter_map(|r| {
            r.knowledge.as_ref().map(|k| TrainingPair {
                query: r.query.text.clone(),
                positive: k.clone(),
                negatives: Vec::new(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Share of pairs held out to pick the best epoch by MRR.
    pub holdout_fraction: f64,
    /// Output dimension; the provider dimension when unset (identity init).
    pub dim_out: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 30,
            lr: 1e-3,
            temperature: 0.05,
            seed: 42,
            holdout_fraction: 0.2,
            dim_out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_mrr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    pub initial_mrr: f64,
    pub best_mrr: f64,
    /// 0 when no epoch beat the initialization.
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Trains a head by minimizing mean in-batch InfoNCE and returns the one
/// with the best held-out MRR seen (the initialization counts as epoch 0).
///
/// Held-out MRR ranks each held-out query's positive among all distinct
/// positive texts of the training set.
pub fn train_head(
    pairs: &[TrainingPair],
    provider: &dyn EmbeddingProvider,
    config: &TrainConfig,
) -> Result<TrainOutcome, RetrieverError> {
    if config.batch_size < 2 {
        return Err(RetrieverError::Config("batch_size must be >= 2".into()));
    }
    if pairs.len() < 2 {
        return Err(RetrieverError::Config("training needs at least 2 pairs".into()));
    }
    if !(config.temperature > 0.0) || !(config.lr >= 0.0) {
        return Err(RetrieverError::Config("temperature must be > 0 and lr >= 0".into()));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(RetrieverError::Config("holdout_fraction must be in [0, 1)".into()));
    }

    let encoded: Vec<EncodedPair> = pairs
        .iter()
        .map(|p| {
            Ok(EncodedPair {
                query: provider.embed(&p.query)?,
                positive: provider.embed(&p.positive)?,
                negatives: p.negatives.iter().map(|n| provider.embed(n)).collect::<Result<_, _>>()?,
                positive_key: normalize_knowledge(&p.positive),
            })
        })
        .collect::<Result<_, RetrieverError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let mut n_hold = (config.holdout_fraction * encoded.len() as f64).round() as usize;
    if encoded.len() - n_hold < 2 {
        n_hold = encoded.len().saturating_sub(2);
    }
    let (held, train): (Vec<usize>, Vec<usize>) = (order[..n_hold].to_vec(), order[n_hold..].to_vec());
    // without a held-out share, select on the training pairs themselves
    let eval_set = if held.is_empty() { train.clone() } else { held.clone() };

    let candidates = Candidates::new(pairs, &encoded);
    let dim_in = provider.dim();
    let mut head = match config.dim_out {
        None => ProjectionHead::identity(dim_in, config.temperature),
        Some(d) if d == dim_in => ProjectionHead::identity(dim_in, config.temperature),
        Some(d) => ProjectionHead::random(dim_in, d, config.temperature, config.seed),
    };
    head.provider_fingerprint = Some(provider.fingerprint());

    let initial_mrr = candidates.mrr(&head, &encoded, &eval_set)?;
    let mut best = (initial_mrr, 0usize, head.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let mut adam = Adam::new(head.weights().len(), config.lr);
    let mut train_order = train.clone();

    for epoch in 1..=config.epochs {
        train_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in train_order.chunks(config.batch_size) {
            let batch: Vec<&EncodedPair> = chunk.iter().map(|&i| &encoded[i]).collect();
            if batch.len() < 2 && batch.iter().all(|p| p.negatives.is_empty()) {
                continue;
            }
            let (loss, grad) = batch_loss_and_grad(&head, &batch);
            adam.step(head.weights_mut(), &grad);
            loss_sum += loss;
            batches += 1;
        }
        let mrr = candidates.mrr(&head, &encoded, &eval_set)?;
        history.push(EpochStats {
            epoch,
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            heldout_mrr: mrr,
        });
        log::debug!("epoch {epoch}: loss {:.4} mrr {mrr:.4}", history.last().unwrap().mean_loss);
        if mrr > best.0 {
            best = (mrr, epoch, head.clone());
        }
    }

    Ok(TrainOutcome {
        head: best.2,
        initial_mrr,
        best_mrr: best.0,
        best_epoch: best.1,
        history,
        train_pairs: train.len(),
        heldout_pairs: held.len(),
    })
}

/// Distinct positive texts, the pool held-out queries are ranked against.
struct Candidates {
    entries: Vec<KnowledgeEntry>,
    vectors: Vec<Vec<f64>>,
    /// pair index → candidate id
    pair_target: Vec<String>,
}

impl Candidates {
    fn new(pairs: &[TrainingPair], encoded: &[EncodedPair]) -> Self {
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        let mut vectors = Vec::new();
        let mut pair_target = Vec::with_capacity(pairs.len());
        for (p, e) in pairs.iter().zip(encoded) {
            let entry = KnowledgeEntry::from_dataset(&p.positive, "train");
            pair_target.push(entry.id.clone());
            if seen.insert(entry.id.clone()) {
                entries.push(entry);
                vectors.push(e.positive.clone());
            }
        }
        Candidates {
            entries,
            vectors,
            pair_target,
        }
    }

    fn mrr(&self, head: &ProjectionHead, encoded: &[EncodedPair], eval: &[usize]) -> Result<f64, RetrieverError> {
        let projected: Vec<Vec<f64>> = self.vectors.iter().map(|v| head.project(v)).collect::<Result<_, _>>()?;
        let index = KnowledgeIndex::from_vectors(self.entries.clone(), projected, String::new(), None)?;
        let mut ranks = Vec::with_capacity(eval.len());
        for &i in eval {
            let q = head.project(&encoded[i].query)?;
            let target = index.position(&self.pair_target[i]).expect("target indexed");
            let ranking = rank_vector(&index, &q)?;
            ranks.push(ranking.iter().position(|&p| p == target).expect("full ranking") + 1);
        }
        Ok(mean_reciprocal_rank(&ranks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::HashEmbedder;

    fn toy_pairs() -> Vec<TrainingPair> {
        vec![
            TrainingPair {
                query: "employees in new york".into(),
                positive: "new york refers to state = 'NY'".into(),
                negatives: vec![],
            },
            TrainingPair {
                query: "patients with normal albumin".into(),
                positive: "albumin is within normal range refers to ALB between 3.5 and 5.5".into(),
                negatives: vec![],
            },
        ]
    }

    #[test]
    fn zero_learning_rate_returns_initialization() {
        let p = HashEmbedder::new(16).unwrap();
        let config = TrainConfig {
            batch_size: 2,
            epochs: 3,
            lr: 0.0,
            holdout_fraction: 0.0,
            ..Default::default()
        };
        let out = train_head(&toy_pairs(), &p, &config).unwrap();
        let mut init = ProjectionHead::identity(16, config.temperature);
        init.provider_fingerprint = Some(p.fingerprint());
        assert_eq!(out.head, init);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn one_step_lowers_the_loss() {
        let p = HashEmbedder::new(16).unwrap();
        let pairs = toy_pairs();
        let encoded: Vec<EncodedPair> = pairs
            .iter()
            .map(|t| EncodedPair {
                query: p.embed(&t.query).unwrap(),
                positive: p.embed(&t.positive).unwrap(),
                negatives: vec![],
                positive_key: normalize_knowledge(&t.positive),
            })
            .collect();
        let refs: Vec<&EncodedPair> = encoded.iter().collect();
        let mut head = ProjectionHead::random(16, 8, 0.5, 3);
        let (before, grad) = batch_loss_and_grad(&head, &refs);
        let mut adam = Adam::new(grad.len(), 1e-2);
        adam.step(head.weights_mut(), &grad);
        let (after, _) = batch_loss_and_grad(&head, &refs);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn config_errors() {
        let p = HashEmbedder::new(8).unwrap();
        let c = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(matches!(train_head(&toy_pairs(), &p, &c), Err(RetrieverError::Config(_))));
        assert!(train_head(&toy_pairs()[..1], &p, &TrainConfig::default()).is_err());
    }
}
