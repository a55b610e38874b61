//! Prompt layouts.
//!
//! Knowledge generation:
//!
//! ```text
//! DB Schema: <schema>
//!
//! Question: <few-shot question 1>
//! Evidence: <few-shot evidence 1>
//!
//! ...
//!
//! Question: <target question>
//! Evidence: 
//! ```
//!
//! SQL generation adds a `SQL: <few-shot SQL>` line to every example block
//! and ends with `Question: <target>\nEvidence: <knowledge>\nSQL: `.
//! Blocks are separated by one blank line; the prompt has no trailing
//! newline. Refinement prompts use the knowledge layout with each retrieved
//! entry as the evidence of a block that repeats the target question.
//!
//! Over budget, few-shot blocks are dropped from the tail first, then the
//! schema is rendered with a smaller budget down to its table names.

use super::PipelineError;
use crate::dataset::{render_schema_focused, table_names_only, DatabaseSchema, ExampleTriplet, Query};
use crate::knowledge_base::KnowledgeEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    KnowledgeGen,
    SqlGen,
}

#[derive(Debug, Clone)]
pub struct PromptTemplate<'a> {
    pub kind: PromptKind,
    schema: &'a DatabaseSchema,
    focus_sql: Option<&'a str>,
    examples: Vec<String>,
    target: String,
}

impl<'a> PromptTemplate<'a> {
    pub fn knowledge(query: &Query, schema: &'a DatabaseSchema, examples: &[ExampleTriplet]) -> Self {
        PromptTemplate {
            kind: PromptKind::KnowledgeGen,
            schema,
            focus_sql: None,
            examples: examples
                .iter()
                .map(|e| format!("Question: {}\nEvidence: {}", e.query.text, one_line(e.knowledge.as_deref().unwrap_or(""))))
                .collect(),
            target: format!("Question: {}\nEvidence: ", query.text),
        }
    }

    pub fn sql(query: &Query, knowledge: &str, schema: &'a DatabaseSchema, examples: &[ExampleTriplet]) -> Self {
        PromptTemplate {
            kind: PromptKind::SqlGen,
            schema,
            focus_sql: None,
            examples: examples
                .iter()
                .map(|e| {
                    format!(
                        "Question: {}\nEvidence: {}\nSQL: {}",
                        e.query.text,
                        one_line(e.knowledge.as_deref().unwrap_or("")),
                        one_line(e.gold_sql.as_deref().unwrap_or(""))
                    )
                })
                .collect(),
            target: format!("Question: {}\nEvidence: {}\nSQL: ", query.text, one_line(knowledge)),
        }
    }

    pub fn refinement(query: &Query, retrieved: &[KnowledgeEntry], schema: &'a DatabaseSchema) -> Self {
        PromptTemplate {
            kind: PromptKind::KnowledgeGen,
            schema,
            focus_sql: None,
            examples: retrieved
                .iter()
                .map(|e| format!("Question: {}\nEvidence: {}", query.text, one_line(&e.text)))
                .collect(),
            target: format!("Question: {}\nEvidence: ", query.text),
        }
    }

    /// Keeps the columns of tables this SQL mentions when the schema shrinks.
    pub fn with_focus(mut self, sql: Option<&'a str>) -> Self {
        self.focus_sql = sql;
        self
    }

    pub fn example_count(&self) -> usize {
        self.examples.len()
    }

    /// Renders within `budget` characters.
    pub fn render(&self, budget: usize) -> Result<String, PipelineError> {
        let full_schema = render_schema_focused(self.schema, usize::MAX, self.focus_sql);
        for n in (0..=self.examples.len()).rev() {
            let text = self.assemble(&full_schema, n);
            if chars(&text) <= budget {
                return Ok(text);
            }
        }
        let overhead = chars(&self.assemble("", 0));
        let minimal = chars(&table_names_only(self.schema));
        if overhead + minimal > budget {
            return Err(PipelineError::Budget {
                needed: overhead + minimal,
                budget,
            });
        }
        let schema = render_schema_focused(self.schema, budget - overhead, self.focus_sql);
        Ok(self.assemble(&schema, 0))
    }

    fn assemble(&self, schema: &str, n_examples: usize) -> String {
        let mut out = format!("DB Schema: {schema}\n\n");
        for block in &self.examples[..n_examples] {
            out.push_str(block);
            out.push_str("\n\n");
        }
        out.push_str(&self.target);
        out
    }
}

pub fn build_knowledge_prompt(
    query: &Query,
    schema: &DatabaseSchema,
    examples: &[ExampleTriplet],
    budget: usize,
) -> Result<String, PipelineError> {
    PromptTemplate::knowledge(query, schema, examples).render(budget)
}

pub fn build_sql_prompt(
    query: &Query,
    knowledge: &str,
    schema: &DatabaseSchema,
    examples: &[ExampleTriplet],
    budget: usize,
) -> Result<String, PipelineError> {
    PromptTemplate::sql(query, knowledge, schema, examples).render(budget)
}

pub fn build_refinement_prompt(
    query: &Query,
    retrieved: &[KnowledgeEntry],
    schema: &DatabaseSchema,
    budget: usize,
) -> Result<String, PipelineError> {
    PromptTemplate::refinement(query, retrieved, schema).render(budget)
}

/// Line breaks inside a field would break the block structure.
fn one_line(text: &str) -> String {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

fn chars(s: &str) -> usize {
    s.chars().count()
}
