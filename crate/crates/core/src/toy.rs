//! Bundled toy dataset: three small SQLite databases, BIRD-style train and
//! test files, a run configuration and recorded completions, plus the
//! scripted backend the completions were recorded from.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Deserialize;

use crate::knowledge_base::normalize_knowledge;
use crate::llm::{sha256_hex, LlmBackend, LlmError};

pub const TRAIN_JSON: &str = include_str!("../data/toy/train.json");
pub const TEST_JSON: &str = include_str!("../data/toy/test.json");
pub const CONFIG_TOML: &str = include_str!("../data/toy/katsql.toml");
pub const FIXTURES_JSONL: &str = include_str!("../data/toy/fixtures.jsonl");

/// `(db_id, SQL script)` for every toy database.
pub const DATABASES: [(&str, &str); 3] = [
    ("company", include_str!("../data/toy/sql/company.sql")),
    ("hospital", include_str!("../data/toy/sql/hospital.sql")),
    ("school", include_str!("../data/toy/sql/school.sql")),
];

/// Knowledge the oracle volunteers during expansion, per database. A few
/// test clauses are left out on purpose so coverage stays below 100%.
const HINTS: [(&str, &[&str]); 3] = [
    (
        "company",
        &[
            "New York refers to state = 'NY'",
            "California refers to state = 'CA'",
            "male refers to gender = 'M'",
            "average job performance refers to performance = 'Average'",
            "hired after 2005 refers to hiredate > '2005-12-31'",
            "Regional Manager is a position title",
            "Utah refers to state = 'UT'",
            "city refers to locationcity",
            "lower minimum salary refers to MIN(minsalary)",
            "Account Representative and Trainee are position titles",
        ],
    ),
    (
        "hospital",
        &[
            "albumin is within normal range refers to ALB between 3.5 and 5.5",
            "uric acid level above normal refers to UA > 8.0",
            "highest glucose level refers to MAX(GLU)",
            "diagnosed with SLE refers to Diagnosis = 'SLE'",
            "male refers to SEX = 'M'",
        ],
    ),
    (
        "school",
        &[
            "number of test takers refers to NumTstTakr",
            "highest average math score refers to MAX(AvgScrMath)",
            "total score of at least 1500 refers to NumGE1500",
            "more than 100 refers to NumGE1500 > 100",
            "most charter schools refers to MAX(COUNT(School))",
        ],
    ),
];

/// Writes the toy workspace into `dir`: `train.json`, `test.json`,
/// `katsql.toml`, `fixtures.jsonl` and `databases/<db>/<db>.sqlite`.
pub fn materialize(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("train.json"), TRAIN_JSON)?;
    fs::write(dir.join("test.json"), TEST_JSON)?;
    fs::write(dir.join("katsql.toml"), CONFIG_TOML)?;
    fs::write(dir.join("fixtures.jsonl"), FIXTURES_JSONL)?;
    build_databases(&dir.join("databases"))
}

/// Creates `<dir>/<db>/<db>.sqlite` for every toy database, replacing
/// existing files.
pub fn build_databases(dir: &Path) -> io::Result<()> {
    for (db_id, script) in DATABASES {
        let db_dir = dir.join(db_id);
        fs::create_dir_all(&db_dir)?;
        let path = db_dir.join(format!("{db_id}.sqlite"));
        if path.exists() {
            fs::remove_file(&path)?;
        }
        let conn = rusqlite::Connection::open(&path).map_err(io::Error::other)?;
        conn.execute_batch(script).map_err(io::Error::other)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    db_id: String,
    question: String,
    evidence: String,
    #[serde(rename = "SQL")]
    sql: String,
}

struct Known {
    db_id: String,
    clauses: Vec<String>,
    sql: String,
    train: bool,
}

/// Scripted stand-in for a knowledge-aware LLM over the toy questions.
///
/// * Expansion prompts (training question): the gold evidence clauses one
///   per line, plus two database hints picked by the prompt hash.
/// * Refinement prompts (candidate evidence for the target question): the
///   candidate clauses that belong to the gold evidence.
/// * SQL prompts: the gold SQL when the Evidence line contains every gold
///   clause, otherwise a mutated statement.
pub struct ToyOracle {
    known: HashMap<String, Known>,
}

impl Default for ToyOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyOracle {
    pub fn new() -> Self {
        let mut known = HashMap::new();
        for (raw, train) in [(TRAIN_JSON, true), (TEST_JSON, false)] {
            let records: Vec<RawRecord> = serde_json::from_str(raw).expect("bundled toy data parses");
            for r in records {
                let clauses = r.evidence.split("; ").map(str::to_string).collect();
                known.insert(
                    r.question,
                    Known {
                        db_id: r.db_id,
                        clauses,
                        sql: r.sql,
                        train,
                    },
                );
            }
        }
        ToyOracle { known }
    }

    fn expansion(&self, prompt: &str, k: &Known) -> String {
        let mut lines = k.clauses.clone();
        if let Some((_, hints)) = HINTS.iter().find(|(db, _)| *db == k.db_id) {
            let h = u64::from_str_radix(&sha256_hex(prompt)[..12], 16).expect("hex");
            let n = hints.len() as u64;
            lines.push(hints[(h % n) as usize].to_string());
            lines.push(hints[((h / n) % n) as usize].to_string());
        }
        lines.join("\n")
    }

    fn refinement(k: &Known, candidates: &[&str]) -> String {
        let offered: Vec<String> = candidates
            .iter()
            .flat_map(|c| c.split("; "))
            .map(normalize_knowledge)
            .collect();
        let kept: Vec<&str> = k
            .clauses
            .iter()
            .filter(|c| offered.contains(&normalize_knowledge(c)))
            .map(String::as_str)
            .collect();
        if kept.is_empty() {
            candidates.first().map(|c| c.to_string()).unwrap_or_default()
        } else {
            kept.join("\n")
        }
    }

    fn sql(k: &Known, evidence: &str) -> String {
        let have = normalize_knowledge(evidence);
        let sql = if k.clauses.iter().all(|c| have.contains(&normalize_knowledge(c))) {
            k.sql.clone()
        } else {
            mutate(&k.sql)
        };
        format!("```sql\n{sql}\n```")
    }
}

/// A plausible but wrong variant of `sql`: flipped sort direction, a
/// corrupted string literal, or an empty result.
pub fn mutate(sql: &str) -> String {
    if sql.contains(" DESC") {
        return sql.replacen(" DESC", " ASC", 1);
    }
    if sql.contains(" ASC") {
        return sql.replacen(" ASC", " DESC", 1);
    }
    if sql.contains("ORDER BY") && sql.contains(" LIMIT") {
        return sql.replacen(" LIMIT", " DESC LIMIT", 1);
    }
    if let Some(i) = sql.find('\'') {
        return format!("{}'x{}", &sql[..i], &sql[i + 1..]);
    }
    format!("SELECT * FROM ({sql}) LIMIT 0")
}

impl LlmBackend for ToyOracle {
    fn name(&self) -> &str {
        "toy-oracle"
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let blocks: Vec<&str> = prompt.split("\n\n").collect();
        let target = blocks.last().copied().unwrap_or_default();
        let mut lines = target.lines();
        let question = lines.next().and_then(|l| l.strip_prefix("Question: ")).unwrap_or_default();
        let Some(k) = self.known.get(question) else {
            return Ok("SELECT 1".into());
        };
        if target.ends_with("\nSQL: ") {
            let evidence = lines.next().and_then(|l| l.strip_prefix("Evidence: ")).unwrap_or_default();
            return Ok(Self::sql(k, evidence));
        }
        let head = format!("Question: {question}\nEvidence: ");
        let candidates: Vec<&str> = blocks[..blocks.len() - 1]
            .iter()
            .filter_map(|b| b.strip_prefix(head.as_str()))
            .collect();
        if candidates.is_empty() && k.train {
            Ok(self.expansion(prompt, k))
        } else {
            Ok(Self::refinement(k, &candidates))
        }
    }
}
