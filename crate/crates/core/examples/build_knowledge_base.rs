//! Seeds a knowledge base from training evidence, then expands it with two
//! rounds of few-shot knowledge generation against the scripted toy LLM.
//!
//!     cargo run --example build_knowledge_base

use std::sync::Arc;

use katsql::dataset::{load_dataset, DatasetFormat};
use katsql::knowledge_base::{expand_kb, init_kb, kb_stats, save_kb, KbBuildConfig, Source};
use katsql::llm::{LlmClient, LlmConfig};
use katsql::retriever::{EmbeddingProvider, HashEmbedder};
use katsql::toy::{self, ToyOracle};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    toy::materialize(dir.path()).unwrap();
    let train = load_dataset(&dir.path().join("train.json"), DatasetFormat::Bird).unwrap();

    let config = KbBuildConfig {
        few_shot_k: 4,
        iterations: 2,
        prompt_budget: 8000,
        ..KbBuildConfig::default()
    };
    let kb = init_kb(&train, config.clone());
    println!("seeded with {} entries from {} records", kb.len(), train.records.len());

    let llm = LlmClient::new(LlmConfig::default(), Box::new(ToyOracle::new()));
    let embedder: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(256).unwrap());
    let (kb, report) = expand_kb(kb, &train, &llm, &config, embedder.as_ref()).unwrap();
    println!(
        "expansion: {} LLM calls, {} new entries, {} duplicates, {} lines rejected",
        report.llm_calls, report.added, report.duplicates, report.rejected_lines
    );
    print!("{}", kb_stats(&kb));

    println!("\nsome generated entries:");
    for e in kb.entries().filter(|e| e.source == Source::Generated).take(5) {
        println!("  [{}] {}", e.db_id, e.text);
    }

    let path = dir.path().join("kb.jsonl");
    save_kb(&kb, &path).unwrap();
    println!("\nsaved {} bytes to kb.jsonl", std::fs::metadata(&path).unwrap().len());
}
