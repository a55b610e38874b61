//! Executes gold and predicted SQL against a toy database, compares result
//! multisets, and aggregates EX and VES.
//!
//!     cargo run --example execution_evaluation

use std::time::Duration;

use katsql::evaluation::{compute_ex, compute_ves, execute_sql, execution_match, VesInput};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    katsql::toy::build_databases(dir.path()).unwrap();
    let db = dir.path().join("company/company.sqlite");
    let timeout = Duration::from_secs(10);

    let gold = "SELECT COUNT(*) FROM employee AS T1 INNER JOIN location AS T2 ON T1.locationID = T2.locationID \
                WHERE T2.state = 'NY' AND T1.performance = 'Good'";
    let predictions = [
        ("same query", gold.to_string()),
        ("reordered join", "SELECT COUNT(*) FROM location AS T2 JOIN employee AS T1 ON T2.locationID = T1.locationID \
                            WHERE T1.performance = 'Good' AND T2.state = 'NY'".to_string()),
        ("wrong state", gold.replace("'NY'", "'CA'")),
        ("syntax error", "SELECT COUNT(* FROM employee".to_string()),
    ];

    let g = execute_sql(&db, gold, timeout);
    println!("gold: {:?} ({} VM steps)", g.rows, g.vm_steps);
    let mut matches = Vec::new();
    let mut ves = Vec::new();
    for (name, sql) in &predictions {
        let p = execute_sql(&db, sql, timeout);
        let m = execution_match(&p, &g);
        println!("{name:<15} match={m:<5} status={:?} steps={}", p.status, p.vm_steps);
        matches.push(m);
        ves.push(VesInput {
            matched: m,
            t_gold: g.vm_steps as f64,
            t_pred: p.vm_steps.max(1) as f64,
        });
    }
    println!("EX  {:.2}", compute_ex(&matches).unwrap());
    println!("VES {:.2}", compute_ves(&ves, 100.0).unwrap());
}
