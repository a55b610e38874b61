//! Read-only SQL execution and result comparison.

use std::cmp::Ordering;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode, OpenFlags, StatementStatus};
use serde::{Deserialize, Serialize};

/// Absolute tolerance for comparing numeric cells.
pub const FLOAT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Integer(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// NULL equals only NULL; numbers compare by value within
    /// [`FLOAT_TOLERANCE`], whatever their storage class.
    pub fn matches(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Null, Cell::Null) => true,
            (Cell::Integer(a), Cell::Integer(b)) => a == b,
            (Cell::Text(a), Cell::Text(b)) => a == b,
            (Cell::Blob(a), Cell::Blob(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => (x - y).abs() <= FLOAT_TOLERANCE,
                _ => false,
            },
        }
    }

    /// A total order used to canonicalize unordered results.
    fn canonical_cmp(&self, other: &Cell) -> Ordering {
        self.rank().cmp(&other.rank()).then_with(|| match (self, other) {
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => Ordering::Equal,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub rows: Vec<Vec<Cell>>,
    /// Whether row order is significant (the SQL has ORDER BY).
    pub ordered: bool,
    pub elapsed_secs: f64,
    /// SQLite virtual-machine steps taken; a deterministic cost measure.
    pub vm_steps: u64,
    pub status: ExecStatus,
    pub error: Option<String>,
}

impl ExecutionResult {
    fn failed(status: ExecStatus, ordered: bool, elapsed: Duration, error: String) -> Self {
        ExecutionResult {
            rows: Vec::new(),
            ordered,
            elapsed_secs: elapsed.as_secs_f64(),
            vm_steps: 0,
            status,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

/// Whether `sql` has an ORDER BY clause outside string literals.
pub fn has_order_by(sql: &str) -> bool {
    let mut words = Vec::new();
    let mut word = String::new();
    let mut quote: Option<char> = None;
    for c in sql.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if matches!(c, '\'' | '"' | '`') => {
                quote = Some(c);
                words.push(std::mem::take(&mut word));
            }
            None if c.is_alphanumeric() || c == '_' => word.push(c.to_ascii_uppercase()),
            None => words.push(std::mem::take(&mut word)),
        }
    }
    words.push(word);
    let words: Vec<&String> = words.iter().filter(|w| !w.is_empty()).collect();
    words.windows(2).any(|w| w[0] == "ORDER" && w[1] == "BY")
}

/// Runs `sql` against a read-only connection to `db_file`. Failures are
/// reported through `status`; exceeding `timeout` interrupts the query.
pub fn execute_sql(db_file: &Path, sql: &str, timeout: Duration) -> ExecutionResult {
    let ordered = has_order_by(sql);
    let start = Instant::now();
    let conn = match Connection::open_with_flags(
        db_file,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    ) {
        Ok(c) => c,
        Err(e) => return ExecutionResult::failed(ExecStatus::Error, ordered, start.elapsed(), e.to_string()),
    };
    let deadline = start + timeout;
    conn.progress_handler(1000, Some(move || Instant::now() >= deadline));

    let run = || -> rusqlite::Result<(Vec<Vec<Cell>>, u64)> {
        let mut stmt = conn.prepare(sql)?;
        let ncols = stmt.column_count();
        let mut rows = Vec::new();
        {
            let mut cursor = stmt.query([])?;
            while let Some(row) = cursor.next()? {
                let mut cells = Vec::with_capacity(ncols);
                for i in 0..ncols {
                    cells.push(match row.get_ref(i)? {
                        ValueRef::Null => Cell::Null,
                        ValueRef::Integer(v) => Cell::Integer(v),
                        ValueRef::Real(v) => Cell::Real(v),
                        ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                        ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
                    });
                }
                rows.push(cells);
            }
        }
        let steps = stmt.get_status(StatementStatus::VmStep).max(0) as u64;
        Ok((rows, steps))
    };
    let result = run();
    let elapsed = start.elapsed();
    match result {
        Ok((rows, vm_steps)) => ExecutionResult {
            rows,
            ordered,
            elapsed_secs: elapsed.as_secs_f64(),
            vm_steps,
            status: ExecStatus::Ok,
            error: None,
        },
        Err(e) => {
            let interrupted = matches!(&e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted);
            let status = if interrupted { ExecStatus::Timeout } else { ExecStatus::Error };
            ExecutionResult::failed(status, ordered, elapsed, e.to_string())
        }
    }
}

fn rows_match(a: &[Cell], b: &[Cell]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.matches(y))
}

fn canonical_rows(rows: &[Vec<Cell>]) -> Vec<&Vec<Cell>> {
    let mut sorted: Vec<&Vec<Cell>> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.canonical_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| a.len().cmp(&b.len()))
    });
    sorted
}

/// Whether the prediction returns the gold result. Row order matters only
/// when the gold SQL orders its rows; columns compare by position. A failed
/// execution on either side is a mismatch.
pub fn execution_match(pred: &ExecutionResult, gold: &ExecutionResult) -> bool {
    if !pred.is_ok() || !gold.is_ok() || pred.rows.len() != gold.rows.len() {
        return false;
    }
    if gold.ordered {
        return pred.rows.iter().zip(&gold.rows).all(|(a, b)| rows_match(a, b));
    }
    let (p, g) = (canonical_rows(&pred.rows), canonical_rows(&gold.rows));
    if p.iter().zip(&g).all(|(a, b)| rows_match(a, b)) {
        return true;
    }
    // tolerance can reorder near-equal numbers; fall back to matching
    let mut used = vec![false; g.len()];
    p.iter().all(|row| {
        match g.iter().enumerate().position(|(i, cand)| !used[i] && rows_match(row, cand)) {
            Some(i) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn db(sql: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sqlite");
        Connection::open(&path).unwrap().execute_batch(sql).unwrap();
        (dir, path)
    }

    fn ok(rows: Vec<Vec<Cell>>, ordered: bool) -> ExecutionResult {
        ExecutionResult {
            rows,
            ordered,
            elapsed_secs: 0.0,
            vm_steps: 0,
            status: ExecStatus::Ok,
            error: None,
        }
    }

    #[test]
    fn select_one() {
        let (_d, p) = db("CREATE TABLE t(x)");
        let r = execute_sql(&p, "SELECT 1", Duration::from_secs(5));
        assert_eq!(r.status, ExecStatus::Ok);
        assert_eq!(r.rows, vec![vec![Cell::Integer(1)]]);
        assert!(r.vm_steps > 0);
    }

    #[test]
    fn invalid_sql_is_an_error_status() {
        let (_d, p) = db("CREATE TABLE t(x)");
        let r = execute_sql(&p, "SELEC x FROM", Duration::from_secs(5));
        assert_eq!(r.status, ExecStatus::Error);
        assert!(r.rows.is_empty());
    }

    #[test]
    fn read_only() {
        let (_d, p) = db("CREATE TABLE t(x)");
        let r = execute_sql(&p, "INSERT INTO t VALUES (1)", Duration::from_secs(5));
        assert_eq!(r.status, ExecStatus::Error);
    }

    #[test]
    fn slow_query_times_out() {
        let (_d, p) = db("CREATE TABLE t(x)");
        let slow = "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM c) SELECT COUNT(*) FROM c";
        let r = execute_sql(&p, slow, Duration::from_millis(10));
        assert_eq!(r.status, ExecStatus::Timeout);
    }

    #[test]
    fn vm_steps_are_repeatable() {
        let (_d, p) = db("CREATE TABLE t(x); INSERT INTO t VALUES (1),(2),(3)");
        let a = execute_sql(&p, "SELECT SUM(x) FROM t", Duration::from_secs(5));
        let b = execute_sql(&p, "SELECT SUM(x) FROM t", Duration::from_secs(5));
        assert_eq!(a.vm_steps, b.vm_steps);
    }

    #[test]
    fn order_by_detection() {
        assert!(has_order_by("SELECT a FROM t ORDER  BY a"));
        assert!(has_order_by("select a from t order\nby a desc"));
        assert!(!has_order_by("SELECT 'order by' FROM t"));
        assert!(!has_order_by("SELECT border, bye FROM t"));
    }

    #[test]
    fn permuted_rows_match_without_order_by() {
        let a = ok(vec![vec![Cell::Integer(1)], vec![Cell::Integer(2)]], false);
        let b = ok(vec![vec![Cell::Integer(2)], vec![Cell::Integer(1)]], false);
        assert!(execution_match(&a, &b));
        let ordered_gold = ok(b.rows.clone(), true);
        assert!(!execution_match(&a, &ordered_gold));
    }

    #[test]
    fn multiset_not_set() {
        let a = ok(vec![vec![Cell::Integer(1)], vec![Cell::Integer(1)]], false);
        let b = ok(vec![vec![Cell::Integer(1)], vec![Cell::Integer(2)]], false);
        assert!(!execution_match(&a, &b));
    }

    #[test]
    fn cell_rules() {
        assert!(Cell::Real(1.0).matches(&Cell::Integer(1)));
        assert!(Cell::Real(0.1 + 0.2).matches(&Cell::Real(0.3)));
        assert!(!Cell::Real(1.0).matches(&Cell::Real(1.00001)));
        assert!(!Cell::Null.matches(&Cell::Integer(0)));
        assert!(Cell::Null.matches(&Cell::Null));
        assert!(!Cell::Text("1".into()).matches(&Cell::Integer(1)));
    }

    #[test]
    fn errors_never_match() {
        let mut a = ok(vec![], false);
        let b = a.clone();
        a.status = ExecStatus::Error;
        assert!(!execution_match(&a, &b));
        assert!(!execution_match(&a, &a));
    }

    #[test]
    fn tolerance_across_sort_order() {
        let a = ok(vec![vec![Cell::Real(1.0000004), Cell::Text("b".into())], vec![Cell::Real(1.0), Cell::Text("a".into())]], false);
        let b = ok(vec![vec![Cell::Real(1.0), Cell::Text("b".into())], vec![Cell::Real(1.0000004), Cell::Text("a".into())]], false);
        assert!(execution_match(&a, &b));
    }

    fn cell() -> impl Strategy<Value = Cell> {
        prop_oneof![
            Just(Cell::Null),
            (-3i64..3).prop_map(Cell::Integer),
            "[ab]{0,2}".prop_map(Cell::Text),
        ]
    }

    proptest! {
        #[test]
        fn reflexive_and_symmetric(
            a in proptest::collection::vec(proptest::collection::vec(cell(), 2), 0..6),
            b in proptest::collection::vec(proptest::collection::vec(cell(), 2), 0..6),
            perm_seed in any::<u64>(),
        ) {
            let ra = ok(a.clone(), false);
            prop_assert!(execution_match(&ra, &ra));
            let rb = ok(b, false);
            prop_assert_eq!(execution_match(&ra, &rb), execution_match(&rb, &ra));
            let mut shuffled = a;
            let n = shuffled.len();
            if n > 1 {
                shuffled.rotate_left((perm_seed as usize) % n);
            }
            prop_assert!(execution_match(&ok(shuffled, false), &ra));
        }
    }
}
