//! Knowledge-augmented text-to-SQL: knowledge base construction, dense
//! retrieval with a contrastively trained projection head, LLM knowledge
//! refinement and SQL generation, and execution-level evaluation.

pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod knowledge_base;
pub mod llm;
pub mod pipeline;
pub mod retriever;
pub mod toy;
pub mod util;
