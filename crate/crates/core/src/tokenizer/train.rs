//! WordPiece vocabulary training.
//!
//! Words start as characters (continuation characters carry the `##`
//! prefix). Each round merges the adjacent pair with the highest
//! `count(pair) / (count(left) * count(right))`; equal scores go to the
//! lexicographically smallest `(left, right)`. Pairs seen fewer than
//! `min_frequency` times are never merged.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::pretokenize::pre_split;
use super::vocab::{Vocab, CONTINUATION_PREFIX, SPECIAL_TOKENS};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_FREQUENCY: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merge {
    pub left: String,
    pub right: String,
    pub merged: String,
    pub pair_count: u64,
}

pub fn train_wordpiece<'a, I>(corpus: I, vocab_size: usize, min_frequency: u64) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    train_wordpiece_traced(corpus, vocab_size, min_frequency).map(|(v, _)| v)
}

/// Like [`train_wordpiece`] but also returns the merges in application order.
pub fn train_wordpiece_traced<'a, I>(
    corpus: I,
    vocab_size: usize,
    min_frequency: u64,
) -> Result<(Vocab, Vec<Merge>)>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for doc in corpus {
        for w in pre_split(doc) {
            *word_counts.entry(w.text).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::config("cannot train a vocabulary on an empty corpus"));
    }

    let mut symbols = Interner::default();
    let mut words: Vec<(Vec<u32>, u64)> = Vec::with_capacity(word_counts.len());
    let mut alphabet = BTreeSet::new();
    for (word, count) in &word_counts {
        let mut units = Vec::new();
        for (i, c) in word.chars().enumerate() {
            // every character gets a word-initial form, even if only seen mid-word
            alphabet.insert(c.to_string());
            let s = if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION_PREFIX}{c}")
            };
            alphabet.insert(s.clone());
            units.push(symbols.intern(&s));
        }
        words.push((units, *count));
    }

    let floor = SPECIAL_TOKENS.len() + alphabet.len();
    if vocab_size <= floor {
        return Err(Error::config(format!(
            "vocab_size {vocab_size} must exceed {} special tokens + {} alphabet symbols",
            SPECIAL_TOKENS.len(),
            alphabet.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().cloned());
    let mut present: HashSet<String> = tokens.iter().cloned().collect();
    let mut merges = Vec::new();

    while tokens.len() < vocab_size {
        let Some((left, right, pair_count)) = best_pair(&words, &symbols, min_frequency) else {
            break;
        };
        let l = symbols.name(left).to_string();
        let r = symbols.name(right).to_string();
        let merged = format!("{l}{}", r.strip_prefix(CONTINUATION_PREFIX).unwrap_or(&r));
        let id = symbols.intern(&merged);
        for (units, _) in &mut words {
            apply_merge(units, left, right, id);
        }
        if present.insert(merged.clone()) {
            tokens.push(merged.clone());
        }
        merges.push(Merge {
            left: l,
            right: r,
            merged,
            pair_count,
        });
    }

    Ok((Vocab::from_tokens(tokens)?, merges))
}

#[derive(Default)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }

    fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }
}

fn best_pair(words: &[(Vec<u32>, u64)], symbols: &Interner, min_frequency: u64) -> Option<(u32, u32, u64)> {
    let mut unit_counts: HashMap<u32, u64> = HashMap::new();
    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    for (units, count) in words {
        for &u in units {
            *unit_counts.entry(u).or_default() += count;
        }
        for w in units.windows(2) {
            *pair_counts.entry((w[0], w[1])).or_default() += count;
        }
    }

    let mut best: Option<((u32, u32), u64, u128)> = None;
    for (&(l, r), &pc) in &pair_counts {
        if pc < min_frequency.max(1) {
            continue;
        }
        let denom = unit_counts[&l] as u128 * unit_counts[&r] as u128;
        let better = match best {
            None => true,
            Some(((bl, br), bpc, bdenom)) => {
                // pc/denom vs bpc/bdenom, compared exactly
                match (pc as u128 * bdenom).cmp(&(bpc as u128 * denom)) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => {
                        (symbols.name(l), symbols.name(r)) < (symbols.name(bl), symbols.name(br))
                    }
                }
            }
        };
        if better {
            best = Some(((l, r), pc, denom));
        }
    }
    best.map(|((l, r), pc, _)| (l, r, pc))
}

fn apply_merge(units: &mut Vec<u32>, left: u32, right: u32, merged: u32) {
    if units.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(units.len());
    let mut i = 0;
    while i < units.len() {
        if i + 1 < units.len() && units[i] == left && units[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(units[i]);
            i += 1;
        }
    }
    *units = out;
}
