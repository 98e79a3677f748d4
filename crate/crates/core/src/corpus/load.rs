use std::collections::HashSet;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::schema::{AnnotatedDocument, EntityMention, RelationInstance};
use crate::error::{Error, Result};
use crate::io::read_utf8;

/// Pre-training record: `{"doc_id": string, "text": string}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusLoad {
    pub documents: Vec<RawDocument>,
    /// Blank lines and records whose text is empty.
    pub skipped: usize,
}

pub fn load_corpus(path: &Path) -> Result<CorpusLoad> {
    let text = read_utf8(path)?;
    let mut out = CorpusLoad::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            out.skipped += 1;
            continue;
        }
        let doc: RawDocument = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if doc.text.trim().is_empty() {
            out.skipped += 1;
            continue;
        }
        out.documents.push(doc);
    }
    if out.documents.is_empty() {
        warn!("corpus {} contains no documents", path.display());
    }
    if out.skipped > 0 {
        warn!("skipped {} empty records in {}", out.skipped, path.display());
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawMention {
    start: usize,
    end: usize,
    label: String,
    #[serde(default)]
    surface: Option<String>,
}

#[derive(Deserialize)]
struct RawAnnotated {
    doc_id: String,
    text: String,
    #[serde(default)]
    mentions: Vec<RawMention>,
    #[serde(default)]
    relations: Vec<RelationInstance>,
}

/// Loads and validates an annotated JSONL dataset. Any invalid document fails
/// the whole load.
pub fn load_annotated(path: &Path) -> Result<Vec<AnnotatedDocument>> {
    let text = read_utf8(path)?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotated = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let mut mentions = Vec::with_capacity(raw.mentions.len());
        for (k, m) in raw.mentions.into_iter().enumerate() {
            let label = m
                .label
                .parse()
                .map_err(|e| Error::validation(&raw.doc_id, format!("mention {k}: {e}")))?;
            mentions.push(EntityMention {
                start: m.start,
                end: m.end,
                label,
                surface: m.surface.unwrap_or_default(),
            });
        }
        let mut doc = AnnotatedDocument {
            doc_id: raw.doc_id,
            text: raw.text,
            mentions,
            relations: raw.relations,
        };
        doc.validate()?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::validation(&doc.doc_id, "duplicate doc_id"));
        }
        docs.push(doc);
    }
    Ok(docs)
}
