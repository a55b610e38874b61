//! The full pipeline on the toy workspace, replayed from recorded
//! completions: build-kb, train-retriever, generate, evaluate.
//!
//!     cargo run --example end_to_end

use katsql::cli::{build_kb, evaluate, generate, train_retriever, Context, RunConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    katsql::toy::materialize(dir.path()).unwrap();
    let config = RunConfig::load(&dir.path().join("katsql.toml")).unwrap();
    let ctx = Context::new(config, dir.path()).unwrap();

    let (kb, expansion) = build_kb(&ctx).unwrap();
    println!("knowledge base: {} entries ({} generated)", kb.len(), expansion.added);
    let trained = train_retriever(&ctx).unwrap();
    println!("retriever: held-out MRR {:.4} -> {:.4}", trained.initial_mrr, trained.best_mrr);
    let outputs = generate(&ctx).unwrap();
    println!("generated {} statements\n", outputs.len());
    print!("{}", evaluate(&ctx).unwrap());
}
