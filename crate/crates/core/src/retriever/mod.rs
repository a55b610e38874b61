//! Dense retrieval over the knowledge base and contrastive training of a
//! linear projection head on top of frozen provider embeddings.

mod embed;
mod head;
mod index;
mod loss;
mod metrics;
mod train;

pub use embed::{
    cosine, dot, embed, l2_normalize, norm, provider_from_config, tokenize, EmbeddingBackend, EmbeddingConfig,
    EmbeddingProvider, HashEmbedder, HttpEmbedder,
};
pub use head::ProjectionHead;
pub use index::{build_index, rank_vector, retrieve, KnowledgeIndex, Retriever};
pub use loss::{batch_loss_and_grad, info_nce_loss, EncodedPair};
pub use metrics::{
    eval_retrieval, load_labeled, mean_reciprocal_rank, top_k_accuracy, LabeledQuery, RetrievalMetrics, TOP_KS,
};
pub use train::{train_head, training_pairs, EpochStats, TrainConfig, TrainOutcome, TrainingPair};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrieverError {
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("knowledge base is empty")]
    EmptyKb,
    #[error("unknown knowledge entry {0}")]
    UnknownEntry(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("artifact fingerprint mismatch: index built with {built}, used with {used}")]
    FingerprintMismatch { built: String, used: String },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}
