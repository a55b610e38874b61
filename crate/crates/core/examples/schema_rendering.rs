//! Renders a toy database schema at several prompt budgets, and focused on
//! the tables one query touches.
//!
//!     cargo run --example schema_rendering

use katsql::dataset::{load_dataset, referenced_tables, render_schema, render_schema_focused, DatasetFormat};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    katsql::toy::materialize(dir.path()).unwrap();
    let test = load_dataset(&dir.path().join("test.json"), DatasetFormat::Bird).unwrap();
    let schema = test.schema("company").unwrap();

    for budget in [4000, 300, 60] {
        println!("--- budget {budget}\n{}\n", render_schema(schema, budget));
    }

    let record = test.record("test-02").unwrap();
    let sql = record.gold_sql.as_deref().unwrap();
    println!("--- focused on {:?}", referenced_tables(schema, sql));
    println!("{}", render_schema_focused(schema, 250, Some(sql)));
}
