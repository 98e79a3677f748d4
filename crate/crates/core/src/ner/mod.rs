//! BIO token-classification fine-tuning and sliding-window entity
//! prediction.

mod tags;

pub use tags::{
    align_bio_labels, begin_tag, decode_entities, inside_tag, tag_label, tag_name, BioTagSequence, NUM_TAGS, OUTSIDE,
};

use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::corpus::{AnnotatedDocument, EntityLabel, EntityMention, Splits};
use crate::error::{Error, Result};
use crate::finetune::improves;
pub use crate::finetune::{FinetuneEpoch, FinetuneOutcome};
use crate::eval::{ner_metrics, MetricsReport};
use crate::model::{encoder_graph, forward_token_classification, token_logits_graph, Batch, Checkpoint};
use crate::numerics::{adamw_step, softmax_rows, AdamWConfig, Graph, OptimizerState};
use crate::rng::{stream, Stream};
use crate::tokenizer::{encode_pieces, Piece, TokenizedSequence, Vocab};

/// Windows of rows scored per forward pass at inference.
const INFERENCE_BATCH: usize = 8;

/// Cuts a document into consecutive windows of at most `max_len - 2`
/// subwords. A cut that would split a mention is moved back to the start of
/// that mention, unless the mention alone is longer than a window.
pub fn ner_windows(doc: &AnnotatedDocument, vocab: &Vocab, max_len: usize) -> Vec<TokenizedSequence> {
    let pieces = encode_pieces(&doc.text, vocab);
    let owner: Vec<Option<usize>> = pieces
        .iter()
        .map(|p| doc.mentions.iter().position(|m| p.start < m.end && p.end > m.start))
        .collect();
    let w = max_len.saturating_sub(2).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < pieces.len() {
        let mut end = (start + w).min(pieces.len());
        if end < pieces.len() {
            if let (Some(a), Some(b)) = (owner[end - 1], owner[end]) {
                if a == b {
                    let first = (start..end).find(|&j| owner[j] == Some(a)).unwrap_or(start);
                    if first > start {
                        end = first;
                    }
                }
            }
        }
        out.push(TokenizedSequence::from_pieces(&pieces[start..end], vocab, max_len, false));
        start = end;
    }
    out
}

/// One training window with its gold tags.
#[derive(Debug, Clone)]
pub struct TaggedWindow {
    pub seq: TokenizedSequence,
    pub tags: Vec<Option<usize>>,
}

pub fn tagged_windows(docs: &[AnnotatedDocument], vocab: &Vocab, max_len: usize) -> Result<Vec<TaggedWindow>> {
    let mut out = Vec::new();
    for d in docs {
        for seq in ner_windows(d, vocab, max_len) {
            let tags = align_bio_labels(d, &seq)?.tags;
            out.push(TaggedWindow { seq, tags });
        }
    }
    Ok(out)
}

fn batch_targets(windows: &[&TaggedWindow], seq_len: usize) -> Vec<Option<usize>> {
    let mut t = Vec::with_capacity(windows.len() * seq_len);
    for w in windows {
        t.extend(&w.tags);
        t.extend(std::iter::repeat_n(None, seq_len - w.tags.len()));
    }
    t
}

/// Mean token cross-entropy over non-ignored positions, without dropout.
pub fn token_loss(ckpt: &Checkpoint, windows: &[TaggedWindow]) -> Result<Option<f64>> {
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in windows.chunks(INFERENCE_BATCH) {
        let refs: Vec<&TaggedWindow> = chunk.iter().collect();
        let seqs: Vec<TokenizedSequence> = chunk.iter().map(|w| w.seq.clone()).collect();
        let batch = Batch::from_sequences(&seqs);
        let targets = batch_targets(&refs, batch.seq_len);
        let n = targets.iter().filter(|t| t.is_some()).count();
        if n == 0 {
            continue;
        }
        let mut g = Graph::new();
        let h = encoder_graph(&mut g, &ckpt.params, &ckpt.config, &batch, None)?;
        let logits = token_logits_graph(&mut g, &ckpt.params, h)?;
        let loss = g.cross_entropy(logits, &targets)?;
        total += g.scalar(loss) as f64 * n as f64;
        count += n;
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Predicted mention with the mean probability of its chosen tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedEntity {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
    pub surface: String,
    pub score: f64,
}

impl PredictedEntity {
    pub fn mention(&self) -> EntityMention {
        EntityMention {
            start: self.start,
            end: self.end,
            label: self.label,
            surface: self.surface.clone(),
        }
    }
}

/// Start offsets of sliding windows of `w` pieces with stride `w / 2` that
/// together cover `n` pieces.
fn window_starts(n: usize, w: usize) -> Vec<usize> {
    let stride = (w / 2).max(1);
    let mut starts = vec![0];
    while starts.last().unwrap() + w < n {
        starts.push(starts.last().unwrap() + stride);
    }
    starts
}

/// Sliding-window tagging of `text`. Each run of pieces covered by the same
/// set of windows is taken from the window with the highest mean top-tag
/// probability over that run (the earlier window on ties).
pub fn predict_entities(ckpt: &Checkpoint, vocab: &Vocab, text: &str) -> Result<Vec<PredictedEntity>> {
    ckpt.check_vocab(vocab)?;
    let pieces = encode_pieces(text, vocab);
    if pieces.is_empty() {
        return Ok(Vec::new());
    }
    let max_len = ckpt.inference_window();
    let w = max_len.saturating_sub(2).max(1);
    let starts = window_starts(pieces.len(), w);
    let ranges: Vec<(usize, usize)> = starts.iter().map(|&s| (s, (s + w).min(pieces.len()))).collect();

    // per window, per piece: (argmax tag, its probability)
    let mut scored: Vec<Vec<(usize, f64)>> = Vec::with_capacity(ranges.len());
    for chunk in ranges.chunks(INFERENCE_BATCH) {
        let seqs: Vec<TokenizedSequence> = chunk
            .iter()
            .map(|&(s, e)| TokenizedSequence::from_pieces(&pieces[s..e], vocab, max_len, false))
            .collect();
        let batch = Batch::from_sequences(&seqs);
        let logits = forward_token_classification(ckpt, &batch, NUM_TAGS)?;
        let probs = softmax_rows(logits.data(), NUM_TAGS)?;
        for (b, &(s, e)) in chunk.iter().enumerate() {
            let row0 = b * batch.seq_len + 1;
            scored.push(
                (0..e - s)
                    .map(|k| {
                        let p = &probs[(row0 + k) * NUM_TAGS..(row0 + k + 1) * NUM_TAGS];
                        let mut best = 0;
                        for t in 1..NUM_TAGS {
                            if p[t] > p[best] {
                                best = t;
                            }
                        }
                        (best, p[best] as f64)
                    })
                    .collect(),
            );
        }
    }

    let covering = |j: usize| -> Vec<usize> {
        (0..ranges.len()).filter(|&k| ranges[k].0 <= j && j < ranges[k].1).collect()
    };
    let mut chosen: Vec<(usize, f64)> = vec![(0, 0.0); pieces.len()];
    let mut j = 0;
    while j < pieces.len() {
        let set = covering(j);
        let mut end = j + 1;
        while end < pieces.len() && covering(end) == set {
            end += 1;
        }
        let mut best = set[0];
        let mut best_mean = f64::NEG_INFINITY;
        for &k in &set {
            let mean = (j..end).map(|i| scored[k][i - ranges[k].0].1).sum::<f64>() / (end - j) as f64;
            if mean > best_mean {
                best = k;
                best_mean = mean;
            }
        }
        for i in j..end {
            chosen[i] = scored[best][i - ranges[best].0];
        }
        j = end;
    }

    let full = whole_sequence(&pieces, vocab);
    let mut tags = vec![None];
    tags.extend(chosen.iter().map(|&(t, _)| Some(t)));
    tags.push(None);
    let mentions = decode_entities(&tags, &full, text);
    Ok(mentions
        .into_iter()
        .map(|m| {
            let ps: Vec<f64> = pieces
                .iter()
                .zip(&chosen)
                .filter(|(p, _)| p.start >= m.start && p.end <= m.end)
                .map(|(_, &(_, prob))| prob)
                .collect();
            PredictedEntity {
                start: m.start,
                end: m.end,
                label: m.label,
                surface: m.surface,
                score: ps.iter().sum::<f64>() / ps.len().max(1) as f64,
            }
        })
        .collect())
}

fn whole_sequence(pieces: &[Piece], vocab: &Vocab) -> TokenizedSequence {
    TokenizedSequence::from_pieces(pieces, vocab, pieces.len() + 2, false)
}

/// [`predict_entities`] for each document, in parallel on the current rayon
/// pool; the output order follows `docs`.
pub fn predict_documents(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    docs: &[AnnotatedDocument],
) -> Result<Vec<Vec<PredictedEntity>>> {
    ckpt.check_vocab(vocab)?;
    docs.par_iter().map(|d| predict_entities(ckpt, vocab, &d.text)).collect()
}

/// Entity-level scores of `ckpt` on `docs`.
pub fn evaluate_ner(ckpt: &Checkpoint, vocab: &Vocab, docs: &[AnnotatedDocument]) -> Result<MetricsReport> {
    let predicted = predict_documents(ckpt, vocab, docs)?;
    let mut gold = BTreeMap::new();
    let mut pred = BTreeMap::new();
    for (d, p) in docs.iter().zip(&predicted) {
        gold.insert(d.doc_id.clone(), d.mentions.clone());
        pred.insert(d.doc_id.clone(), p.iter().map(PredictedEntity::mention).collect());
    }
    let mut report = ner_metrics(&gold, &pred)?;
    let max_len = ckpt.inference_window();
    report.evaluation_loss = token_loss(ckpt, &tagged_windows(docs, vocab, max_len)?)?;
    Ok(report)
}

pub fn finetune_ner(
    ckpt: Checkpoint,
    splits: &Splits<AnnotatedDocument>,
    vocab: &Vocab,
    config: &TrainingConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if splits.train.is_empty() {
        return Err(Error::config("NER training split is empty"));
    }
    ckpt.check_vocab(vocab)?;
    let mut ckpt = if ckpt.heads.token_tags == Some(NUM_TAGS) {
        ckpt
    } else {
        ckpt.with_token_head(NUM_TAGS, config.seed)?
    };
    let max_len = config.max_sequence_length.min(ckpt.config.max_sequence_length);
    ckpt.heads.window = Some(max_len);
    let train = tagged_windows(&splits.train, vocab, max_len)?;
    info!(
        "NER fine-tuning on {} windows from {} documents",
        train.len(),
        splits.train.len()
    );

    let mut opt = OptimizerState::new(AdamWConfig::new(config.learning_rate, config.weight_decay))?;
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut dropout_rng = stream(config.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Option<f64>, usize, Checkpoint, Option<MetricsReport>)> = None;
    let start_steps = ckpt.provenance.steps;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let ws: Vec<&TaggedWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let seqs: Vec<TokenizedSequence> = ws.iter().map(|w| w.seq.clone()).collect();
            let batch = Batch::from_sequences(&seqs);
            let targets = batch_targets(&ws, batch.seq_len);
            if targets.iter().all(Option::is_none) {
                continue;
            }
            let mut g = Graph::new();
            let h = encoder_graph(&mut g, &ckpt.params, &ckpt.config, &batch, Some(&mut dropout_rng))?;
            let logits = token_logits_graph(&mut g, &ckpt.params, h)?;
            let loss = g.cross_entropy(logits, &targets)?;
            let value = g.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("NER loss became {value} in epoch {epoch}")));
            }
            let grads = g.backward(loss)?;
            adamw_step(&mut ckpt.params, &grads, &mut opt)?;
            total += value;
            batches += 1;
        }
        ckpt.provenance.steps = start_steps + opt.step_count;
        let report = if splits.validation.is_empty() {
            None
        } else {
            Some(evaluate_ner(&ckpt, vocab, &splits.validation)?)
        };
        let record = FinetuneEpoch {
            epoch,
            train_loss: if batches > 0 { total / batches as f64 } else { 0.0 },
            step_count: ckpt.provenance.steps,
            validation_f1: report.as_ref().map(|r| r.micro.f1),
            validation_loss: report.as_ref().and_then(|r| r.evaluation_loss),
        };
        info!(
            "epoch {epoch}: train loss {:.6}, validation F1 {:?}",
            record.train_loss, record.validation_f1
        );
        if improves(best.as_ref().and_then(|b| b.0), record.validation_f1) {
            best = Some((record.validation_f1, epoch, ckpt.clone(), report));
        }
        history.push(record);
    }
    if splits.validation.is_empty() {
        warn!("no validation documents; returning the last epoch");
    }
    let (_, best_epoch, checkpoint, report) = best.expect("at least one epoch");
    Ok(FinetuneOutcome {
        checkpoint,
        best_epoch,
        history,
        report,
    })
}
