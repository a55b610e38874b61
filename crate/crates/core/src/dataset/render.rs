//! Schema → prompt text.
//!
//! Layout, one line per table followed by the foreign keys:
//!
//! ```text
//! Table employee: ssn TEXT, performance TEXT (job performance), locationID INTEGER
//! Table location: locationID INTEGER, state TEXT
//! Foreign key: employee.locationID = location.locationID
//! ```
//!
//! A table whose columns were dropped to fit the budget renders as
//! `Table employee`. When the full listing does not fit, detail is shed in
//! this order: column descriptions, foreign-key lines, columns of tables the
//! gold SQL does not mention (last table first), columns of the remaining
//! tables (last table first). Table lines go only when nothing else is left,
//! from the end, and the output never exceeds the budget (in characters).

use std::collections::BTreeSet;

use super::DatabaseSchema;

/// Renders `schema` within `budget` characters.
pub fn render_schema(schema: &DatabaseSchema, budget: usize) -> String {
    render_schema_focused(schema, budget, None)
}

/// Like [`render_schema`], but columns of tables referenced by `focus_sql`
/// are the last to be dropped.
pub fn render_schema_focused(schema: &DatabaseSchema, budget: usize, focus_sql: Option<&str>) -> String {
    if budget == 0 {
        return String::new();
    }
    let referenced = focus_sql.map(|sql| referenced_tables(schema, sql));
    let mut plan = Plan::full(schema);
    if fits(&plan.render(schema), budget) {
        return plan.render(schema);
    }

    plan.descriptions = false;
    if fits(&plan.render(schema), budget) {
        return plan.render(schema);
    }
    plan.foreign_keys = false;
    if fits(&plan.render(schema), budget) {
        return plan.render(schema);
    }

    let n = schema.tables.len();
    let is_referenced = |i: usize| {
        referenced
            .as_ref()
            .is_some_and(|set| set.contains(&schema.tables[i].name.to_ascii_lowercase()))
    };
    // unreferenced tables first, each group from the last table backwards
    let order: Vec<usize> = (0..n)
        .rev()
        .filter(|&i| !is_referenced(i))
        .chain((0..n).rev().filter(|&i| is_referenced(i)))
        .collect();
    for i in order {
        plan.columns[i] = false;
        if fits(&plan.render(schema), budget) {
            return plan.render(schema);
        }
    }

    // only bare table lines remain; keep the longest prefix of whole lines
    let mut out = String::new();
    for line in plan.render(schema).lines() {
        let candidate = if out.is_empty() {
            line.to_string()
        } else {
            format!("{out}\n{line}")
        };
        if !fits(&candidate, budget) {
            break;
        }
        out = candidate;
    }
    out
}

/// The schema with every table reduced to its name: the smallest rendering
/// that still lists all tables.
pub fn table_names_only(schema: &DatabaseSchema) -> String {
    let mut plan = Plan::full(schema);
    plan.descriptions = false;
    plan.foreign_keys = false;
    plan.columns.iter_mut().for_each(|c| *c = false);
    plan.render(schema)
}

/// Lower-cased names of the schema tables that appear as identifiers in `sql`.
pub fn referenced_tables(schema: &DatabaseSchema, sql: &str) -> BTreeSet<String> {
    let tokens: BTreeSet<String> = sql
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect();
    schema
        .tables
        .iter()
        .map(|t| t.name.to_ascii_lowercase())
        .filter(|name| {
            tokens.contains(name)
                // quoted names with spaces
                || (name.contains(|c: char| !(c.is_alphanumeric() || c == '_'))
                    && sql.to_ascii_lowercase().contains(name.as_str()))
        })
        .collect()
}

fn fits(text: &str, budget: usize) -> bool {
    text.chars().count() <= budget
}

struct Plan {
    descriptions: bool,
    foreign_keys: bool,
    columns: Vec<bool>,
}

impl Plan {
    fn full(schema: &DatabaseSchema) -> Self {
        Plan {
            descriptions: true,
            foreign_keys: true,
            columns: vec![true; schema.tables.len()],
        }
    }

    fn render(&self, schema: &DatabaseSchema) -> String {
        let mut lines = Vec::with_capacity(schema.tables.len() + schema.foreign_keys.len());
        for (table, &with_columns) in schema.tables.iter().zip(&self.columns) {
            if !with_columns || table.columns.is_empty() {
                lines.push(format!("Table {}", table.name));
                continue;
            }
            let cols: Vec<String> = table
                .columns
                .iter()
                .map(|c| {
                    let mut s = c.name.clone();
                    if !c.col_type.is_empty() {
                        s.push(' ');
                        s.push_str(&c.col_type);
                    }
                    if self.descriptions {
                        if let Some(d) = &c.description {
                            s.push_str(&format!(" ({d})"));
                        }
                    }
                    s
                })
                .collect();
            lines.push(format!("Table {}: {}", table.name, cols.join(", ")));
        }
        if self.foreign_keys {
            for fk in &schema.foreign_keys {
                lines.push(format!(
                    "Foreign key: {}.{} = {}.{}",
                    fk.from_table, fk.from_column, fk.to_table, fk.to_column
                ));
            }
        }
        lines.join("\n")
    }
}
