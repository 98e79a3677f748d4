use serde::{Deserialize, Serialize};

use super::pretokenize::pre_split;
use super::vocab::{Vocab, CONTINUATION_PREFIX};
use crate::error::Result;

/// `[start, end)` in Unicode scalar values.
pub type CharSpan = (usize, usize);

/// Words longer than this become a single `[UNK]`.
const MAX_CHARS_PER_WORD: usize = 100;

/// One subword of the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    pub id: usize,
    pub start: usize,
    pub end: usize,
}

/// `[CLS] ... [SEP]` sequence with per-token character spans. Special tokens
/// (and markers) carry `None` spans; padding has attention mask 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSequence {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub char_spans: Vec<Option<CharSpan>>,
    pub attention_mask: Vec<u8>,
}

impl TokenizedSequence {
    /// Wraps content tokens in `[CLS]`/`[SEP]`, truncating the content so the
    /// total fits `max_len`, and optionally pads to exactly `max_len`.
    pub fn wrap<I>(content: I, vocab: &Vocab, max_len: usize, pad: bool) -> Self
    where
        I: IntoIterator<Item = (usize, Option<CharSpan>)>,
    {
        let max_len = max_len.max(2);
        let mut seq = TokenizedSequence {
            ids: Vec::with_capacity(max_len),
            tokens: Vec::with_capacity(max_len),
            char_spans: Vec::with_capacity(max_len),
            attention_mask: Vec::with_capacity(max_len),
        };
        seq.push(vocab, Vocab::CLS, None, 1);
        for (id, span) in content.into_iter().take(max_len - 2) {
            seq.push(vocab, id, span, 1);
        }
        seq.push(vocab, Vocab::SEP, None, 1);
        if pad {
            while seq.ids.len() < max_len {
                seq.push(vocab, Vocab::PAD, None, 0);
            }
        }
        seq
    }

    pub fn from_pieces(pieces: &[Piece], vocab: &Vocab, max_len: usize, pad: bool) -> Self {
        Self::wrap(
            pieces.iter().map(|p| (p.id, Some((p.start, p.end)))),
            vocab,
            max_len,
            pad,
        )
    }

    fn push(&mut self, vocab: &Vocab, id: usize, span: Option<CharSpan>, mask: u8) {
        self.ids.push(id);
        self.tokens
            .push(vocab.token(id).map(str::to_string).unwrap_or_else(|_| "[UNK]".into()));
        self.char_spans.push(span);
        self.attention_mask.push(mask);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of unpadded positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Drops trailing padding.
    pub fn trimmed(&self) -> Self {
        let n = self.active_len();
        TokenizedSequence {
            ids: self.ids[..n].to_vec(),
            tokens: self.tokens[..n].to_vec(),
            char_spans: self.char_spans[..n].to_vec(),
            attention_mask: self.attention_mask[..n].to_vec(),
        }
    }
}

/// Greedy longest-match-first segmentation of every pre-split word. A word
/// with any unmatchable remainder becomes one `[UNK]` spanning the word.
pub fn encode_pieces(text: &str, vocab: &Vocab) -> Vec<Piece> {
    let mut pieces = Vec::new();
    for word in pre_split(text) {
        let chars: Vec<char> = word.text.chars().collect();
        match segment(&chars, vocab) {
            Some(parts) => {
                for (id, s, e) in parts {
                    pieces.push(Piece {
                        id,
                        start: word.start + s,
                        end: word.start + e,
                    });
                }
            }
            None => pieces.push(Piece {
                id: Vocab::UNK,
                start: word.start,
                end: word.end,
            }),
        }
    }
    pieces
}

fn segment(chars: &[char], vocab: &Vocab) -> Option<Vec<(usize, usize, usize)>> {
    if chars.len() > MAX_CHARS_PER_WORD {
        return None;
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some((id, end));
                break;
            }
        }
        let (id, end) = found?;
        out.push((id, start, end));
        start = end;
    }
    Some(out)
}

/// Encodes `text` into a `[CLS] ... [SEP]` sequence padded to `max_len`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> TokenizedSequence {
    TokenizedSequence::from_pieces(&encode_pieces(text, vocab), vocab, max_len, true)
}

/// Inverse of encoding up to whitespace: specials are dropped, continuation
/// pieces glue onto their predecessor, other tokens are space-separated.
pub fn decode(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let tok = vocab.token(id)?;
        if vocab.is_special(id) {
            continue;
        }
        match tok.strip_prefix(CONTINUATION_PREFIX) {
            Some(rest) => out.push_str(rest),
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}
