use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

const SQLITE_MAGIC: &[u8; 16] = b"SQLite format 3\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub col_type: String,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

/// `from_table.from_column → to_table.to_column`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<ForeignKey>,
    pub db_file: Option<PathBuf>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| DatasetError::InvalidSchema {
            db_id: self.db_id.clone(),
            message,
        };
        for (i, t) in self.tables.iter().enumerate() {
            if self.tables[..i].iter().any(|o| o.name.eq_ignore_ascii_case(&t.name)) {
                return Err(invalid(format!("duplicate table {}", t.name)));
            }
        }
        for fk in &self.foreign_keys {
            for (table, column) in [(&fk.from_table, &fk.from_column), (&fk.to_table, &fk.to_column)] {
                let ok = self
                    .table(table)
                    .is_some_and(|t| t.columns.iter().any(|c| c.name.eq_ignore_ascii_case(column)));
                if !ok {
                    return Err(invalid(format!("foreign key endpoint {table}.{column} does not exist")));
                }
            }
        }
        Ok(())
    }
}

/// Reads tables, columns and foreign keys from the catalog of a SQLite file.
///
/// Tables are listed by name; columns keep their declaration order. Foreign
/// keys that reference the primary key implicitly are resolved to the key
/// column, and keys whose endpoints do not exist are dropped.
pub fn load_schema(db_file: &Path) -> Result<DatabaseSchema> {
    let io_err = |source: io::Error| DatasetError::Io {
        path: db_file.to_path_buf(),
        source,
    };
    let ext = db_file
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    if !matches!(ext.as_deref(), Some("sqlite" | "sqlite3" | "db")) {
        return Err(DatasetError::UnsupportedEngine(db_file.to_path_buf()));
    }
    let bytes = fs::read(db_file).map_err(io_err)?;
    if !bytes.is_empty() && !bytes.starts_with(SQLITE_MAGIC) {
        return Err(io_err(io::Error::new(
            io::ErrorKind::InvalidData,
            "file is not a SQLite database",
        )));
    }

    let conn = Connection::open_with_flags(db_file, OpenFlags::SQLITE_OPEN_READ_ONLY)
        .map_err(|e| io_err(io::Error::other(e)))?;
    let sql_err = |e: rusqlite::Error| io_err(io::Error::new(io::ErrorKind::InvalidData, e));

    let mut stmt = conn
        .prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
        )
        .map_err(sql_err)?;
    let names: Vec<String> = stmt
        .query_map([], |row| row.get(0))
        .map_err(sql_err)?
        .collect::<std::result::Result<_, _>>()
        .map_err(sql_err)?;

    let mut tables = Vec::with_capacity(names.len());
    let mut primary_keys = Vec::with_capacity(names.len());
    for name in &names {
        let mut info = conn
            .prepare(&format!("PRAGMA table_info({})", quote_ident(name)))
            .map_err(sql_err)?;
        let mut cols: Vec<(Column, i64)> = info
            .query_map([], |row| {
                Ok((
                    Column {
                        name: row.get(1)?,
                        col_type: row.get::<_, Option<String>>(2)?.unwrap_or_default(),
                        description: None,
                    },
                    row.get::<_, i64>(5)?,
                ))
            })
            .map_err(sql_err)?
            .collect::<std::result::Result<_, _>>()
            .map_err(sql_err)?;
        let mut pk: Vec<(i64, String)> = cols
            .iter()
            .filter(|(_, pk)| *pk > 0)
            .map(|(c, pk)| (*pk, c.name.clone()))
            .collect();
        pk.sort();
        primary_keys.push(pk.into_iter().map(|(_, n)| n).collect::<Vec<_>>());
        tables.push(Table {
            name: name.clone(),
            columns: cols.drain(..).map(|(c, _)| c).collect(),
        });
    }

    let mut foreign_keys = Vec::new();
    for table in &tables {
        let mut fk_stmt = conn
            .prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(&table.name)))
            .map_err(sql_err)?;
        let rows: Vec<(i64, String, String, Option<String>)> = fk_stmt
            .query_map([], |row| Ok((row.get(1)?, row.get(2)?, row.get(3)?, row.get(4)?)))
            .map_err(sql_err)?
            .collect::<std::result::Result<_, _>>()
            .map_err(sql_err)?;
        for (seq, to_table, from, to) in rows {
            let Some(target_idx) = tables.iter().position(|t| t.name.eq_ignore_ascii_case(&to_table)) else {
                log::warn!("dropping foreign key {}.{from}: unknown table {to_table}", table.name);
                continue;
            };
            let target = &tables[target_idx];
            let to_column = match to {
                Some(c) => Some(c),
                None => primary_keys[target_idx].get(seq as usize).cloned(),
            };
            let from_col = resolve_column(table, &from);
            let to_col = to_column.as_deref().and_then(|c| resolve_column(target, c));
            match (from_col, to_col) {
                (Some(f), Some(t)) => foreign_keys.push(ForeignKey {
                    from_table: table.name.clone(),
                    from_column: f,
                    to_table: target.name.clone(),
                    to_column: t,
                }),
                _ => log::warn!("dropping unresolvable foreign key {}.{from} -> {to_table}", table.name),
            }
        }
    }
    foreign_keys.sort();
    foreign_keys.dedup();

    let db_id = db_file
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let schema = DatabaseSchema {
        db_id,
        tables,
        foreign_keys,
        db_file: Some(db_file.to_path_buf()),
    };
    schema.validate()?;
    Ok(schema)
}

fn resolve_column(table: &Table, name: &str) -> Option<String> {
    table
        .columns
        .iter()
        .find(|c| c.name.eq_ignore_ascii_case(name))
        .map(|c| c.name.clone())
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Reads BIRD-style `database_description/<table>.csv` files, when present,
/// and attaches each column's description.
pub(super) fn attach_descriptions(schema: &mut DatabaseSchema, dir: &Path) {
    if !dir.is_dir() {
        return;
    }
    for table in &mut schema.tables {
        let path = dir.join(format!("{}.csv", table.name));
        let Ok(bytes) = fs::read(&path) else { continue };
        let text = String::from_utf8_lossy(&bytes);
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(text.trim_start_matches('\u{feff}').as_bytes());
        let Ok(headers) = reader.headers().cloned() else { continue };
        let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let (Some(name_idx), Some(desc_idx)) = (find("original_column_name"), find("column_description")) else {
            continue;
        };
        for record in reader.records().flatten() {
            let (Some(name), Some(desc)) = (record.get(name_idx), record.get(desc_idx)) else {
                continue;
            };
            let desc = desc.split_whitespace().collect::<Vec<_>>().join(" ");
            if desc.is_empty() {
                continue;
            }
            if let Some(col) = table.columns.iter_mut().find(|c| c.name.eq_ignore_ascii_case(name.trim())) {
                col.description = Some(desc);
            }
        }
    }
}
