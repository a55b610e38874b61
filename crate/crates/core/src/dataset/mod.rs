//! Benchmark-style datasets: question / evidence / gold SQL records plus the
//! SQLite databases they run against.
//!
//! The on-disk layout follows the public BIRD and Spider releases: one JSON
//! array of records, and a sibling directory holding one single-file database
//! per `db_id` (either `<dir>/<db_id>/<db_id>.sqlite` or `<dir>/<db_id>.sqlite`).

mod render;
mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use render::{referenced_tables, render_schema, render_schema_focused, table_names_only};
pub use schema::{load_schema, Column, DatabaseSchema, ForeignKey, Table};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("record {record_id} references unknown database `{db_id}`")]
    SchemaRef { record_id: String, db_id: String },
    #[error("unsupported database engine for {0}")]
    UnsupportedEngine(PathBuf),
    #[error("invalid schema {db_id}: {message}")]
    InvalidSchema { db_id: String, message: String },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// A natural-language question posed against one database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub db_id: String,
}

/// A (question, schema, knowledge) triplet, optionally carrying gold SQL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleTriplet {
    pub query: Query,
    pub schema_ref: String,
    /// `None` when the source record had no evidence; never `Some("")`.
    pub knowledge: Option<String>,
    pub gold_sql: Option<String>,
}

impl ExampleTriplet {
    pub fn id(&self) -> &str {
        &self.query.id
    }

    pub fn question(&self) -> &str {
        &self.query.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Records with `question`, `evidence`, `db_id`, `SQL` (and optional `question_id`).
    #[default]
    Bird,
    /// Records with `question`, `db_id`, `query`; no evidence.
    Spider,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<ExampleTriplet>,
    pub schemas: BTreeMap<String, DatabaseSchema>,
    pub split: Split,
}

impl Dataset {
    pub fn schema(&self, db_id: &str) -> Option<&DatabaseSchema> {
        self.schemas.get(db_id)
    }

    pub fn record(&self, id: &str) -> Option<&ExampleTriplet> {
        self.records.iter().find(|r| r.query.id == id)
    }

    pub fn db_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.schema_ref.as_str()).collect()
    }

    /// Keeps only the records accepted by `keep`; schemas no longer referenced
    /// are dropped.
    pub fn filtered(&self, mut keep: impl FnMut(&ExampleTriplet) -> bool) -> Dataset {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let used: BTreeSet<&str> = records.iter().map(|r| r.schema_ref.as_str()).collect();
        let schemas = self
            .schemas
            .iter()
            .filter(|(id, _)| used.contains(id.as_str()))
            .map(|(id, s)| (id.clone(), s.clone()))
            .collect();
        Dataset {
            records,
            schemas,
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Checks the dataset invariants: unique record ids, resolvable schema
    /// references and non-empty question text.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.query.id.as_str()) {
                return Err(DatasetError::Parse {
                    path: path.to_path_buf(),
                    message: format!("duplicate record id {}", r.query.id),
                });
            }
            if r.query.text.trim().is_empty() {
                return Err(DatasetError::Parse {
                    path: path.to_path_buf(),
                    message: format!("record {} has an empty question", r.query.id),
                });
            }
            if !self.schemas.contains_key(&r.schema_ref) {
                return Err(DatasetError::SchemaRef {
                    record_id: r.query.id.clone(),
                    db_id: r.schema_ref.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Loads a dataset file, discovering databases in a sibling directory.
///
/// The database directory is the first of `<stem>_databases/`, `databases/`
/// or `database/` next to `path` that exists.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let db_dir = discover_db_dir(path);
    load_dataset_with_databases(path, format, db_dir.as_deref())
}

pub fn load_dataset_with_databases(
    path: &Path,
    format: DatasetFormat,
    db_dir: Option<&Path>,
) -> Result<Dataset> {
    let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let value: Value = serde_json::from_str(&raw).map_err(|e| parse_err(e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| parse_err("expected a JSON array of records".into()))?;

    let mut records = Vec::with_capacity(items.len());
    for (idx, item) in items.iter().enumerate() {
        records.push(parse_record(item, idx, format).map_err(&parse_err)?);
    }

    let mut schemas = BTreeMap::new();
    for r in &records {
        if schemas.contains_key(&r.schema_ref) {
            continue;
        }
        let db_file = db_dir.and_then(|dir| locate_database(dir, &r.schema_ref));
        let Some(db_file) = db_file else {
            return Err(DatasetError::SchemaRef {
                record_id: r.query.id.clone(),
                db_id: r.schema_ref.clone(),
            });
        };
        let mut schema = load_schema(&db_file)?;
        schema.db_id = r.schema_ref.clone();
        if let Some(dir) = db_dir {
            schema::attach_descriptions(&mut schema, &dir.join(&r.schema_ref).join("database_description"));
        }
        schemas.insert(r.schema_ref.clone(), schema);
    }

    let dataset = Dataset {
        records,
        schemas,
        split: infer_split(path),
    };
    dataset.validate(path)?;
    Ok(dataset)
}

/// Writes the records of `dataset` in the given layout. Schemas are not
/// written; they are rediscovered from the database directory on load.
pub fn save_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    let items: Vec<Value> = dataset
        .records
        .iter()
        .map(|r| {
            let mut obj = serde_json::Map::new();
            obj.insert("question_id".into(), Value::String(r.query.id.clone()));
            obj.insert("db_id".into(), Value::String(r.schema_ref.clone()));
            obj.insert("question".into(), Value::String(r.query.text.clone()));
            match format {
                DatasetFormat::Bird => {
                    if let Some(k) = &r.knowledge {
                        obj.insert("evidence".into(), Value::String(k.clone()));
                    }
                    if let Some(sql) = &r.gold_sql {
                        obj.insert("SQL".into(), Value::String(sql.clone()));
                    }
                }
                DatasetFormat::Spider => {
                    if let Some(sql) = &r.gold_sql {
                        obj.insert("query".into(), Value::String(sql.clone()));
                    }
                }
            }
            Value::Object(obj)
        })
        .collect();
    let text = serde_json::to_string_pretty(&items).expect("records serialize");
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_record(item: &Value, idx: usize, format: DatasetFormat) -> Result<ExampleTriplet, String> {
    let obj = item
        .as_object()
        .ok_or_else(|| format!("record {idx} is not an object"))?;
    let str_field = |key: &str| -> Result<Option<String>, String> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(format!("record {idx}: field `{key}` must be a string, got {other}")),
        }
    };
    let id = match obj.get("question_id") {
        None | Some(Value::Null) => idx.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => return Err(format!("record {idx}: bad question_id {other}")),
    };
    let question = str_field("question")?.ok_or_else(|| format!("record {idx}: missing `question`"))?;
    let db_id = str_field("db_id")?.ok_or_else(|| format!("record {idx}: missing `db_id`"))?;
    let (knowledge, gold_sql) = match format {
        DatasetFormat::Bird => (str_field("evidence")?, str_field("SQL")?),
        DatasetFormat::Spider => (None, str_field("query")?),
    };
    // blank evidence is how BIRD spells "no evidence"
    let knowledge = knowledge.filter(|k| !k.trim().is_empty());
    Ok(ExampleTriplet {
        query: Query {
            id,
            text: question,
            db_id: db_id.clone(),
        },
        schema_ref: db_id,
        knowledge,
        gold_sql,
    })
}

fn discover_db_dir(path: &Path) -> Option<PathBuf> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    [
        parent.join(format!("{stem}_databases")),
        parent.join("databases"),
        parent.join("database"),
    ]
    .into_iter()
    .find(|p| p.is_dir())
}

pub fn locate_database(dir: &Path, db_id: &str) -> Option<PathBuf> {
    ["sqlite", "sqlite3", "db"]
        .iter()
        .flat_map(|ext| {
            [
                dir.join(db_id).join(format!("{db_id}.{ext}")),
                dir.join(format!("{db_id}.{ext}")),
            ]
        })
        .find(|p| p.is_file())
}

fn infer_split(path: &Path) -> Split {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    if stem.contains("train") {
        Split::Train
    } else {
        Split::Test
    }
}
