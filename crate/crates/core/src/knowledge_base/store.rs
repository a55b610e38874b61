//! Line-delimited knowledge-base file.
//!
//! The first line is a header carrying the build configuration and lineage:
//! `{"kind":"katsql-kb","version":1,"build_config":{..},"lineage":".."}`.
//! Every further line is one entry:
//! `{"id","text","source","db_id","origin_query_id"?,"iteration"?}`, in id order.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{entry_id, KbBuildConfig, KbError, KnowledgeBase, KnowledgeEntry, Provenance, Source};

const KIND: &str = "katsql-kb";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    build_config: KbBuildConfig,
    #[serde(default)]
    lineage: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    id: String,
    text: String,
    source: Source,
    db_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    origin_query_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    iteration: Option<usize>,
}

pub fn save_kb(kb: &KnowledgeBase, path: &Path) -> Result<(), KbError> {
    let mut out = String::new();
    let header = Header {
        kind: KIND.into(),
        version: VERSION,
        build_config: kb.build_config.clone(),
        lineage: kb.lineage.clone(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for e in kb.entries() {
        let line = EntryLine {
            id: e.id.clone(),
            text: e.text.clone(),
            source: e.source,
            db_id: e.db_id.clone(),
            origin_query_id: e.provenance.as_ref().map(|p| p.origin_query_id.clone()),
            iteration: e.provenance.as_ref().map(|p| p.iteration),
        };
        out.push_str(&serde_json::to_string(&line).expect("entry serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| KbError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, KbError> {
    let text = fs::read_to_string(path).map_err(|e| KbError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, first)) = lines.next() else {
        return Ok(KnowledgeBase::default());
    };
    let header: Header = serde_json::from_str(first).map_err(|e| KbError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.kind != KIND || header.version != VERSION {
        return Err(KbError::Parse {
            line: 1,
            message: format!("unsupported file kind {} v{}", header.kind, header.version),
        });
    }
    let mut kb = KnowledgeBase::new(header.build_config);
    kb.lineage = header.lineage;
    let mut seen = BTreeSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let parse = |message: String| KbError::Parse { line: lineno, message };
        let raw: EntryLine = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(parse(format!("duplicate id {}", raw.id)));
        }
        if entry_id(&raw.text) != raw.id {
            return Err(parse(format!("id {} does not match its text", raw.id)));
        }
        let provenance = match (raw.source, raw.origin_query_id, raw.iteration) {
            (Source::Dataset, None, None) => None,
            (Source::Generated, Some(origin_query_id), Some(iteration)) if iteration >= 1 => Some(Provenance {
                origin_query_id,
                iteration,
            }),
            _ => return Err(parse(format!("entry {} has inconsistent provenance", raw.id))),
        };
        kb.insert(KnowledgeEntry {
            id: raw.id,
            text: raw.text,
            source: raw.source,
            db_id: raw.db_id,
            provenance,
        });
    }
    Ok(kb)
}
