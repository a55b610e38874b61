//! Regenerates `data/toy/fixtures.jsonl` by running the toy pipeline against
//! the scripted oracle and keeping every completion it produced.
//!
//! Covers the default run plus the `--top 0` and `--no-refinement`
//! ablations, so all three replay hermetically with `--llm mock`.
//!
//!     cargo run --example record_toy_fixtures

use std::path::Path;

use katsql::cli::{build_kb, generate, train_retriever, Context, RunConfig};
use katsql::llm::{save_fixture, CallLedger, LedgerRecord};
use katsql::toy::{self, ToyOracle};

fn context(dir: &Path, edit: impl FnOnce(&mut RunConfig)) -> Context {
    let mut config = RunConfig::from_toml(toy::CONFIG_TOML).expect("toy config parses");
    edit(&mut config);
    Context::new(config, dir)
        .expect("toy config validates")
        .with_backend(|| Box::new(ToyOracle::new()))
}

fn ledger(dir: &Path, name: &str) -> Vec<LedgerRecord> {
    let path = dir.join("ledgers").join(format!("{name}.jsonl"));
    CallLedger::load(&path).expect("ledger written").records().to_vec()
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let work = tmp.path().to_path_buf();
    toy::materialize(&work).expect("toy workspace");

    let mut all = CallLedger::default();
    let ctx = context(&work, |_| {});
    let (kb, report) = build_kb(&ctx).expect("build-kb");
    println!("kb: {} entries, {} added by expansion", kb.len(), report.added);
    ledger(&work, "build-kb").into_iter().for_each(|r| all.push(r));
    let outcome = train_retriever(&ctx).expect("train-retriever");
    println!("retriever: MRR {:.3} -> {:.3}", outcome.initial_mrr, outcome.best_mrr);

    let variants: [(&str, fn(&mut RunConfig)); 3] = [
        ("default", |_| {}),
        ("top-0", |c| c.generation.j = 0),
        ("no-refinement", |c| c.generation.use_refinement = false),
    ];
    for (name, edit) in variants {
        let ctx = context(&work, edit);
        let outputs = generate(&ctx).expect("generate");
        let failed = outputs.iter().filter(|o| o.error.is_some()).count();
        println!("generate[{name}]: {} outputs, {failed} failed", outputs.len());
        ledger(&work, "generate").into_iter().for_each(|r| all.push(r));
    }

    let out = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/fixtures.jsonl");
    save_fixture(&all.to_fixture(), &out, false).expect("fixture written");
    println!("{} calls recorded to {}", all.len(), out.display());
}

