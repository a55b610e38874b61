//! Generates SQL for a few toy questions three ways: without knowledge,
//! with raw retrieved entries, and with LLM-refined knowledge.
//!
//!     cargo run --example knowledge_augmented_generation

use std::sync::Arc;

use katsql::dataset::{load_dataset, DatasetFormat};
use katsql::knowledge_base::{expand_kb, init_kb, ExampleSelector, KbBuildConfig};
use katsql::llm::{LlmClient, LlmConfig};
use katsql::pipeline::{GenerationConfig, Generator};
use katsql::retriever::{EmbeddingProvider, HashEmbedder, Retriever};
use katsql::toy::{self, ToyOracle};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    toy::materialize(dir.path()).unwrap();
    let train = load_dataset(&dir.path().join("train.json"), DatasetFormat::Bird).unwrap();
    let test = load_dataset(&dir.path().join("test.json"), DatasetFormat::Bird).unwrap();

    let llm = LlmClient::new(LlmConfig::default(), Box::new(ToyOracle::new()));
    let embedder: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(256).unwrap());
    let kb_config = KbBuildConfig {
        few_shot_k: 4,
        iterations: 2,
        ..KbBuildConfig::default()
    };
    let (kb, _) = expand_kb(init_kb(&train, kb_config.clone()), &train, &llm, &kb_config, embedder.as_ref()).unwrap();
    let retriever = Retriever::build(&kb, embedder.clone(), None).unwrap();
    let examples = ExampleSelector::new(&train, embedder.as_ref(), true).unwrap();

    let settings = [
        ("no knowledge", GenerationConfig { j: 0, ..Default::default() }),
        ("retrieved", GenerationConfig { j: 3, use_refinement: false, ..Default::default() }),
        ("refined", GenerationConfig { j: 3, ..Default::default() }),
    ];
    for id in ["test-03", "test-09", "test-16"] {
        let record = test.record(id).unwrap();
        println!("{}\n  gold: {}", record.question(), record.gold_sql.as_deref().unwrap());
        for (name, config) in &settings {
            let generator = Generator {
                retriever: Some(&retriever),
                llm: &llm,
                examples: Some(&examples),
                config: GenerationConfig { few_shot_k: 3, ..config.clone() },
            };
            let g = generator.generate(&record.query, test.schema(&record.schema_ref).unwrap()).unwrap();
            println!("  [{name}] evidence: {:?}\n  [{name}] sql: {}", g.sql.knowledge, g.sql.text);
        }
        println!();
    }
    println!("{} LLM calls", llm.ledger().len());
}
