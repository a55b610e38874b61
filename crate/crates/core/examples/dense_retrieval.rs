//! Indexes the toy knowledge base with hash embeddings and retrieves the
//! nearest entries for a few test questions.
//!
//!     cargo run --example dense_retrieval

use std::sync::Arc;

use katsql::dataset::{load_dataset, DatasetFormat};
use katsql::knowledge_base::{init_kb, KbBuildConfig};
use katsql::retriever::{eval_retrieval, HashEmbedder, LabeledQuery, Retriever};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    katsql::toy::materialize(dir.path()).unwrap();
    let train = load_dataset(&dir.path().join("train.json"), DatasetFormat::Bird).unwrap();
    let kb = init_kb(&train, KbBuildConfig::default());

    let retriever = Retriever::build(&kb, Arc::new(HashEmbedder::new(256).unwrap()), None).unwrap();
    for q in [
        "How many female patients have a high total cholesterol?",
        "Which school has the best average reading score?",
        "How many employees work at the Boston office?",
    ] {
        println!("{q}");
        for (entry, score) in retriever.retrieve(q, 3).unwrap() {
            println!("  {score:.3}  {}", entry.text);
        }
    }

    // Each training question against its own evidence.
    let labeled: Vec<LabeledQuery> = train
        .records
        .iter()
        .map(|r| LabeledQuery {
            query: r.query.text.clone(),
            relevant_ids: Vec::new(),
            relevant_texts: vec![r.knowledge.clone().unwrap()],
        })
        .collect();
    let m = eval_retrieval(&retriever, &labeled).unwrap();
    println!("\nMRR {:.4} over {} queries, Top@k {:?}", m.mrr, m.queries, m.top_k);
}
