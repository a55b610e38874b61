//! Trains the projection head with InfoNCE on (question, evidence) pairs
//! from the toy training set and reports held-out MRR per epoch.
//!
//!     cargo run --example contrastive_training

use katsql::dataset::{load_dataset, DatasetFormat};
use katsql::retriever::{info_nce_loss, train_head, training_pairs, HashEmbedder, TrainConfig};

fn main() {
    // Query equal to its positive, one orthogonal negative, tau = 1.
    let loss = info_nce_loss(&[1.0, 0.0], &[1.0, 0.0], &[vec![0.0, 1.0]], 1.0).unwrap();
    println!("closed-form check: {loss:.12} vs ln(1 + e^-1) = {:.12}", (1.0 + (-1.0f64).exp()).ln());

    let dir = tempfile::tempdir().unwrap();
    katsql::toy::materialize(dir.path()).unwrap();
    let train = load_dataset(&dir.path().join("train.json"), DatasetFormat::Bird).unwrap();
    let pairs = training_pairs(&train);

    let config = TrainConfig {
        batch_size: 8,
        epochs: 30,
        lr: 0.01,
        ..TrainConfig::default()
    };
    let embedder = HashEmbedder::new(256).unwrap();
    let out = train_head(&pairs, &embedder, &config).unwrap();
    println!("{} train / {} held-out pairs", out.train_pairs, out.heldout_pairs);
    for s in out.history.iter().filter(|s| s.epoch % 5 == 0 || s.epoch == 1) {
        println!("epoch {:>2}  loss {:.4}  held-out MRR {:.4}", s.epoch, s.mean_loss, s.heldout_mrr);
    }
    println!("MRR {:.4} -> {:.4} (kept epoch {})", out.initial_mrr, out.best_mrr, out.best_epoch);
}
