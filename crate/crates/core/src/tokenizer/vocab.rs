use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{fingerprint, read_utf8, write_atomic};

pub const CONTINUATION_PREFIX: &str = "##";

/// Reserved tokens, in id order: `[PAD]`=0, `[UNK]`=1, `[CLS]`=2, `[SEP]`=3,
/// `[MASK]`=4.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Entity markers appended for relation fine-tuning: head open/close, tail
/// open/close.
pub const MARKER_TOKENS: [&str; 4] = ["<H>", "</H>", "<T>", "</T>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerIds {
    pub head_open: usize,
    pub head_close: usize,
    pub tail_open: usize,
    pub tail_close: usize,
}

/// Cased subword inventory. Ids are dense and equal to line numbers in the
/// vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const CLS: usize = 2;
    pub const SEP: usize = 3;
    pub const MASK: usize = 4;

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::config(format!(
                    "vocabulary must start with {special} at id {i}"
                )));
            }
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("invalid vocabulary entry at id {id}: {tok:?}")));
            }
            if id_of.insert(tok.clone(), id).is_some() {
                return Err(Error::config(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        Ok(Vocab { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Index(format!("token id {id} outside vocabulary of {}", self.len())))
    }

    /// Reserved tokens and entity markers; never masked, never scored.
    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_TOKENS.len() || self.marker_ids().is_some_and(|m| {
            id == m.head_open || id == m.head_close || id == m.tail_open || id == m.tail_close
        })
    }

    pub fn marker_ids(&self) -> Option<MarkerIds> {
        Some(MarkerIds {
            head_open: self.id(MARKER_TOKENS[0])?,
            head_close: self.id(MARKER_TOKENS[1])?,
            tail_open: self.id(MARKER_TOKENS[2])?,
            tail_close: self.id(MARKER_TOKENS[3])?,
        })
    }

    /// Copy with the entity markers appended (no-op if already present).
    pub fn with_markers(&self) -> Vocab {
        let mut v = self.clone();
        for m in MARKER_TOKENS {
            if v.id(m).is_none() {
                v.id_of.insert(m.to_string(), v.tokens.len());
                v.tokens.push(m.to_string());
            }
        }
        v
    }

    /// File contents: one token per line, `\n`-terminated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self.to_text().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        let tokens = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens)
    }
}
