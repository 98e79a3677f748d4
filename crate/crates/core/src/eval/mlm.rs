use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Protocol;
use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::model::{forward_mlm, Batch, Checkpoint};
use crate::numerics::{cross_entropy, log_softmax, Tensor};
use crate::tokenizer::{decode, encode_pieces, TokenizedSequence, Vocab};

/// Literal placeholder marking the masked position in a probe sentence.
pub const PLACEHOLDER: &str = "<MASK>";

/// Anything that maps a batch to masked-LM logits `[batch, seq, vocab]`.
pub trait MaskedLm {
    fn max_sequence_length(&self) -> usize;
    fn mlm_logits(&self, batch: &Batch) -> Result<Tensor<f32>>;
}

impl MaskedLm for Checkpoint {
    fn max_sequence_length(&self) -> usize {
        self.config.max_sequence_length
    }

    fn mlm_logits(&self, batch: &Batch) -> Result<Tensor<f32>> {
        forward_mlm(self, batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeCategory {
    Local,
    English,
}

impl fmt::Display for ProbeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeCategory::Local => "local",
            ProbeCategory::English => "english",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedProbe {
    pub sentence: String,
    pub gold: String,
    pub category: ProbeCategory,
}

impl MaskedProbe {
    pub fn validate(&self) -> Result<()> {
        let n = self.sentence.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::config(format!(
                "probe {:?} has {n} {PLACEHOLDER} placeholders, expected 1",
                self.sentence
            )));
        }
        if self.gold.trim().is_empty() {
            return Err(Error::config(format!("probe {:?} has an empty gold token", self.sentence)));
        }
        Ok(())
    }
}

pub fn load_probes(path: &Path) -> Result<Vec<MaskedProbe>> {
    let probes: Vec<MaskedProbe> = read_jsonl(path)?;
    for p in &probes {
        p.validate()?;
    }
    Ok(probes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeCounts {
    /// Probes in the input, evaluable or not.
    pub total: usize,
    pub evaluated: usize,
    pub excluded: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl ProbeCounts {
    fn finish(&mut self) {
        self.accuracy = if self.evaluated == 0 {
            0.0
        } else {
            self.correct as f64 / self.evaluated as f64
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedProbe {
    pub index: usize,
    pub gold: String,
    pub category: ProbeCategory,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePrediction {
    pub index: usize,
    pub category: ProbeCategory,
    pub gold: String,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub protocol: Protocol,
    pub overall: ProbeCounts,
    pub categories: BTreeMap<String, ProbeCounts>,
    pub excluded: Vec<ExcludedProbe>,
    pub predictions: Vec<ProbePrediction>,
}

/// Encodes a probe with `[MASK]` at the placeholder. Returns the sequence and
/// the mask position, or `None` if truncation would drop the mask.
fn encode_probe(sentence: &str, vocab: &Vocab, max_len: usize) -> Option<(TokenizedSequence, usize)> {
    let (left, right) = sentence.split_once(PLACEHOLDER)?;
    let mut ids: Vec<usize> = encode_pieces(left, vocab).iter().map(|p| p.id).collect();
    let pos = ids.len() + 1;
    ids.push(Vocab::MASK);
    ids.extend(encode_pieces(right, vocab).iter().map(|p| p.id));
    if pos + 1 >= max_len {
        return None;
    }
    let seq = TokenizedSequence::wrap(ids.into_iter().map(|id| (id, None)), vocab, max_len, false);
    Some((seq, pos))
}

/// Top-1 accuracy at the placeholder, per category and overall. Gold tokens
/// that are not a single in-vocabulary subword are excluded and listed.
pub fn masked_token_accuracy<M: MaskedLm>(model: &M, probes: &[MaskedProbe], vocab: &Vocab) -> Result<ProbeReport> {
    let mut report = ProbeReport {
        protocol: Protocol::MlmProbe,
        overall: ProbeCounts::default(),
        categories: BTreeMap::new(),
        excluded: Vec::new(),
        predictions: Vec::new(),
    };
    let max_len = model.max_sequence_length();
    for (index, probe) in probes.iter().enumerate() {
        probe.validate()?;
        let cat = report.categories.entry(probe.category.to_string()).or_default();
        cat.total += 1;
        report.overall.total += 1;
        let gold_pieces = encode_pieces(&probe.gold, vocab);
        let reason = match gold_pieces.as_slice() {
            [p] if p.id == Vocab::UNK => Some("gold token is out of vocabulary".to_string()),
            [_] => None,
            [] => Some("gold token is empty after pre-tokenization".to_string()),
            ps => Some(format!("gold token splits into {} subwords", ps.len())),
        };
        let encoded = encode_probe(&probe.sentence, vocab, max_len);
        let reason = reason.or_else(|| encoded.is_none().then(|| "mask position truncated away".to_string()));
        if let Some(reason) = reason {
            cat.excluded += 1;
            report.overall.excluded += 1;
            report.excluded.push(ExcludedProbe {
                index,
                gold: probe.gold.clone(),
                category: probe.category,
                reason,
            });
            continue;
        }
        let (seq, pos) = encoded.expect("checked above");
        let logits = model.mlm_logits(&Batch::from_sequences(std::slice::from_ref(&seq)))?;
        let v = logits.shape()[2];
        let row = &logits.data()[pos * v..(pos + 1) * v];
        let best = argmax(row);
        let predicted = decode(&[best], vocab)?;
        let correct = predicted == probe.gold;
        cat.evaluated += 1;
        report.overall.evaluated += 1;
        if correct {
            cat.correct += 1;
            report.overall.correct += 1;
        }
        report.predictions.push(ProbePrediction {
            index,
            category: probe.category,
            gold: probe.gold.clone(),
            predicted,
            correct,
        });
    }
    if report.overall.evaluated == 0 {
        return Err(Error::InputContract("no evaluable probes".into()));
    }
    report.overall.finish();
    for c in report.categories.values_mut() {
        c.finish();
    }
    Ok(report)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sentence ids with each content position masked in turn, one row per
/// position, plus the original ids.
fn pll_inputs(sentence: &str, vocab: &Vocab, max_len: usize) -> Result<(Vec<usize>, Batch)> {
    let pieces = encode_pieces(sentence, vocab);
    if pieces.is_empty() {
        return Err(Error::InputContract("sentence has no tokens to score".into()));
    }
    let seq = TokenizedSequence::from_pieces(&pieces, vocab, max_len, false);
    let n = seq.len();
    let rows: Vec<Vec<usize>> = (1..n - 1)
        .map(|i| {
            let mut r = seq.ids.clone();
            r[i] = Vocab::MASK;
            r
        })
        .collect();
    Ok((seq.ids, Batch::from_ids(&rows)))
}

/// Sum over content positions of log p(original | sentence with only that
/// position masked). Specials are neither masked nor scored.
pub fn pseudo_log_likelihood<M: MaskedLm>(model: &M, sentence: &str, vocab: &Vocab) -> Result<f64> {
    Ok(pll_terms(model, sentence, vocab)?.iter().sum())
}

/// Per-position terms of [`pseudo_log_likelihood`], in sentence order.
pub fn pll_terms<M: MaskedLm>(model: &M, sentence: &str, vocab: &Vocab) -> Result<Vec<f64>> {
    let (ids, batch) = pll_inputs(sentence, vocab, model.max_sequence_length())?;
    let logits = model.mlm_logits(&batch)?;
    let (s, v) = (batch.seq_len, logits.shape()[2]);
    let mut terms = Vec::with_capacity(batch.batch);
    for r in 0..batch.batch {
        let pos = r + 1;
        let start = (r * s + pos) * v;
        let row: Vec<f64> = logits.data()[start..start + v].iter().map(|&x| x as f64).collect();
        terms.push(log_softmax(&row)?[ids[pos]]);
    }
    Ok(terms)
}

/// The same quantity through the loss path: minus the sum of one-position
/// cross-entropies.
pub fn pll_via_cross_entropy<M: MaskedLm>(model: &M, sentence: &str, vocab: &Vocab) -> Result<f64> {
    let (ids, batch) = pll_inputs(sentence, vocab, model.max_sequence_length())?;
    let logits = model.mlm_logits(&batch)?;
    let (s, v) = (batch.seq_len, logits.shape()[2]);
    let mut total = 0.0;
    for r in 0..batch.batch {
        let pos = r + 1;
        let start = (r * s + pos) * v;
        let row: Vec<f64> = logits.data()[start..start + v].iter().map(|&x| x as f64).collect();
        total -= cross_entropy(&row, v, &[Some(ids[pos])])?;
    }
    Ok(total)
}
