//! Relation classification over annotated entity pairs. The head and tail
//! mentions are wrapped in marker tokens and the pair representation is read
//! at the two opening markers.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::corpus::{AnnotatedDocument, EntityMention, RelationInventory, Splits, NO_RELATION};
use crate::error::{Error, Result};
use crate::eval::{re_metrics, MetricsReport, Protocol, RelationRecord};
use crate::finetune::{improves, FinetuneEpoch, FinetuneOutcome};
use crate::model::{encoder_graph, forward_relation, marker_positions, relation_logits_graph, Batch, Checkpoint};
use crate::numerics::{adamw_step, softmax_rows, AdamWConfig, Graph, OptimizerState};
use crate::rng::{stream, Stream};
use crate::tokenizer::{encode_pieces, CharSpan, MarkerIds, Piece, TokenizedSequence, Vocab};

const INFERENCE_BATCH: usize = 8;

/// One annotated relation ready for the classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationExample {
    pub doc_id: String,
    /// Mention indices into the document.
    pub head: usize,
    pub tail: usize,
    pub head_span: CharSpan,
    pub tail_span: CharSpan,
    /// Inventory id.
    pub label: usize,
    pub seq: TokenizedSequence,
}

/// What happened to the annotated relations of a document set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub kept: usize,
    pub no_relation: usize,
    pub out_of_inventory: usize,
    /// Pairs whose mentions cannot share one window.
    pub unfit: usize,
}

impl BuildCounts {
    fn add(&mut self, o: &BuildCounts) {
        self.kept += o.kept;
        self.no_relation += o.no_relation;
        self.out_of_inventory += o.out_of_inventory;
        self.unfit += o.unfit;
    }
}

fn markers(vocab: &Vocab) -> Result<MarkerIds> {
    vocab
        .marker_ids()
        .ok_or_else(|| Error::config("vocabulary has no entity marker tokens"))
}

/// First and last piece overlapping `span`.
fn piece_range(pieces: &[Piece], span: CharSpan) -> Option<(usize, usize)> {
    let first = pieces.iter().position(|p| p.start < span.1 && p.end > span.0)?;
    let last = pieces.iter().rposition(|p| p.start < span.1 && p.end > span.0)?;
    Some((first, last))
}

/// Marks the head and tail pieces and cuts a window of at most `max_len`
/// (with `[CLS]`/`[SEP]`) centred on the midpoint of the stretch from the
/// first to the last marker. `None` if that stretch does not fit or the two
/// mentions share a piece.
pub fn marked_sequence(
    pieces: &[Piece],
    head: CharSpan,
    tail: CharSpan,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Option<TokenizedSequence>> {
    let m = markers(vocab)?;
    let (Some(h), Some(t)) = (piece_range(pieces, head), piece_range(pieces, tail)) else {
        return Ok(None);
    };
    if h.0 <= t.1 && t.0 <= h.1 {
        return Ok(None);
    }
    let mut content: Vec<(usize, Option<CharSpan>)> = Vec::with_capacity(pieces.len() + 4);
    let (mut lo, mut hi) = (usize::MAX, 0);
    for (i, p) in pieces.iter().enumerate() {
        for (at, id) in [(h.0, m.head_open), (t.0, m.tail_open)] {
            if i == at {
                lo = lo.min(content.len());
                content.push((id, None));
            }
        }
        content.push((p.id, Some((p.start, p.end))));
        for (at, id) in [(h.1, m.head_close), (t.1, m.tail_close)] {
            if i == at {
                hi = hi.max(content.len());
                content.push((id, None));
            }
        }
    }
    let w = max_len.saturating_sub(2);
    if hi - lo + 1 > w {
        return Ok(None);
    }
    let n = content.len();
    let start = if n <= w {
        0
    } else {
        let slack = w - (hi - lo + 1);
        lo.saturating_sub(slack / 2).min(n - w)
    };
    let end = (start + w).min(n);
    Ok(Some(TokenizedSequence::wrap(content[start..end].iter().copied(), vocab, max_len, false)))
}

/// One example per annotated relation whose label is in `inventory`.
/// `NO_RELATION` and out-of-inventory labels are dropped, as are pairs that
/// cannot share a window; all three are counted.
pub fn build_relation_instances(
    doc: &AnnotatedDocument,
    vocab: &Vocab,
    inventory: &RelationInventory,
    max_len: usize,
) -> Result<(Vec<RelationExample>, BuildCounts)> {
    markers(vocab)?;
    let pieces = encode_pieces(&doc.text, vocab);
    let mut counts = BuildCounts::default();
    let mut out = Vec::new();
    for r in &doc.relations {
        if r.label == NO_RELATION {
            counts.no_relation += 1;
            continue;
        }
        let Some(label) = inventory.id(&r.label) else {
            counts.out_of_inventory += 1;
            info!("{}: relation label {:?} not in the inventory, dropped", doc.doc_id, r.label);
            continue;
        };
        let (hm, tm) = match (doc.mentions.get(r.head), doc.mentions.get(r.tail)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::validation(
                    &doc.doc_id,
                    format!("relation {} -> {} references a missing mention", r.head, r.tail),
                ))
            }
        };
        let head_span = (hm.start, hm.end);
        let tail_span = (tm.start, tm.end);
        match marked_sequence(&pieces, head_span, tail_span, vocab, max_len)? {
            Some(seq) => {
                counts.kept += 1;
                out.push(RelationExample {
                    doc_id: doc.doc_id.clone(),
                    head: r.head,
                    tail: r.tail,
                    head_span,
                    tail_span,
                    label,
                    seq,
                });
            }
            None => counts.unfit += 1,
        }
    }
    Ok((out, counts))
}

/// [`build_relation_instances`] over a document set. Unfit pairs are logged
/// once with their total.
pub fn relation_examples(
    docs: &[AnnotatedDocument],
    vocab: &Vocab,
    inventory: &RelationInventory,
    max_len: usize,
) -> Result<(Vec<RelationExample>, BuildCounts)> {
    let mut all = Vec::new();
    let mut counts = BuildCounts::default();
    for d in docs {
        let (ex, c) = build_relation_instances(d, vocab, inventory, max_len)?;
        all.extend(ex);
        counts.add(&c);
    }
    if counts.unfit > 0 {
        warn!("{} relation pairs skipped: mentions do not fit one window of {max_len}", counts.unfit);
    }
    Ok((all, counts))
}

/// Extends `vocab` with the entity markers, grows the checkpoint's embedding
/// table to match and attaches a relation head over `inventory` unless one
/// with the same labels is present. Returns the checkpoint and the extended
/// vocabulary it is bound to.
pub fn prepare_relation_checkpoint(
    ckpt: Checkpoint,
    vocab: &Vocab,
    inventory: &RelationInventory,
    seed: u64,
) -> Result<(Checkpoint, Vocab)> {
    let marked = vocab.with_markers();
    let mut ckpt = if ckpt.check_vocab(&marked).is_ok() {
        ckpt
    } else {
        ckpt.check_vocab(vocab)?;
        let mut c = ckpt.with_vocab_size(marked.len(), seed)?;
        c.attach_vocab(&marked)?;
        c
    };
    if ckpt.heads.relation_labels.as_deref() != Some(inventory.labels()) {
        ckpt = ckpt.with_relation_head(inventory.labels().to_vec(), seed)?;
    }
    Ok((ckpt, marked))
}

fn inventory_of(ckpt: &Checkpoint) -> Result<RelationInventory> {
    let labels = ckpt
        .heads
        .relation_labels
        .clone()
        .ok_or_else(|| Error::config("checkpoint has no relation head"))?;
    RelationInventory::new(labels)
}

/// Label distribution for each example, in inventory order.
fn score(ckpt: &Checkpoint, vocab: &Vocab, examples: &[RelationExample]) -> Result<Vec<Vec<f64>>> {
    let m = markers(vocab)?;
    let n = ckpt.heads.relation_labels.as_ref().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(INFERENCE_BATCH) {
        let seqs: Vec<TokenizedSequence> = chunk.iter().map(|e| e.seq.clone()).collect();
        let logits = forward_relation(ckpt, &Batch::from_sequences(&seqs), &m, n)?;
        let probs = softmax_rows(logits.data(), n)?;
        out.extend(probs.chunks(n).map(|r| r.iter().map(|&p| p as f64).collect::<Vec<f64>>()));
    }
    Ok(out)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Classifier output for one ordered mention pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    pub label: String,
    pub score: f64,
    /// Softmax over the inventory, in inventory order.
    pub distribution: Vec<f64>,
}

/// Classifies the pair (`head`, `tail`) of mention indices in `doc`.
pub fn predict_relation(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    doc: &AnnotatedDocument,
    head: usize,
    tail: usize,
) -> Result<RelationPrediction> {
    ckpt.check_vocab(vocab)?;
    let inventory = inventory_of(ckpt)?;
    let n = doc.mentions.len();
    if head >= n || tail >= n || head == tail {
        return Err(Error::Index(format!(
            "mention pair ({head}, {tail}) invalid for a document with {n} mentions"
        )));
    }
    let (hm, tm) = (&doc.mentions[head], &doc.mentions[tail]);
    let pieces = encode_pieces(&doc.text, vocab);
    let seq = marked_sequence(
        &pieces,
        (hm.start, hm.end),
        (tm.start, tm.end),
        vocab,
        ckpt.inference_window(),
    )?
    .ok_or_else(|| {
        Error::InputContract(format!(
            "{}: mentions {head} and {tail} do not fit one window of {}",
            doc.doc_id,
            ckpt.inference_window()
        ))
    })?;
    let ex = RelationExample {
        doc_id: doc.doc_id.clone(),
        head,
        tail,
        head_span: (hm.start, hm.end),
        tail_span: (tm.start, tm.end),
        label: 0,
        seq,
    };
    let distribution = score(ckpt, vocab, std::slice::from_ref(&ex))?.remove(0);
    let best = argmax(&distribution);
    Ok(RelationPrediction {
        label: inventory.labels()[best].clone(),
        score: distribution[best],
        distribution,
    })
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPredictionRecord {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub gold_label: String,
    pub pred_label: String,
    pub score: f64,
}

/// Gold-pair predictions and their report; the evaluation loss is the mean
/// cross-entropy of the gold labels.
pub fn evaluate_re_detailed(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    docs: &[AnnotatedDocument],
) -> Result<(MetricsReport, Vec<RelationPredictionRecord>)> {
    ckpt.check_vocab(vocab)?;
    let inventory = inventory_of(ckpt)?;
    let (examples, _) = relation_examples(docs, vocab, &inventory, ckpt.inference_window())?;
    let probs = score(ckpt, vocab, &examples)?;
    let labels = inventory.labels();
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    let mut records = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for (e, p) in examples.iter().zip(&probs) {
        let best = argmax(p);
        loss -= p[e.label].max(f64::MIN_POSITIVE).ln();
        let record = |label: usize| RelationRecord {
            doc_id: e.doc_id.clone(),
            head: e.head_span,
            tail: e.tail_span,
            label: labels[label].clone(),
        };
        gold.push(record(e.label));
        pred.push(record(best));
        records.push(RelationPredictionRecord {
            doc_id: e.doc_id.clone(),
            head: e.head,
            tail: e.tail,
            gold_label: labels[e.label].clone(),
            pred_label: labels[best].clone(),
            score: p[best],
        });
    }
    let mut report = re_metrics(&gold, &pred, Protocol::ReGoldPair)?;
    report.evaluation_loss = (!examples.is_empty()).then(|| loss / examples.len() as f64);
    Ok((report, records))
}

/// Gold-pair relation scores of `ckpt` on `docs`.
pub fn evaluate_re(ckpt: &Checkpoint, vocab: &Vocab, docs: &[AnnotatedDocument]) -> Result<MetricsReport> {
    Ok(evaluate_re_detailed(ckpt, vocab, docs)?.0)
}

/// Relation scores when entities come from a tagger. A gold relation is
/// classified only if both of its mention spans were predicted exactly;
/// otherwise it counts as a miss. `predicted` maps document ids to predicted
/// mentions.
pub fn evaluate_re_predicted_pairs(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    docs: &[AnnotatedDocument],
    predicted: &BTreeMap<String, Vec<EntityMention>>,
) -> Result<MetricsReport> {
    ckpt.check_vocab(vocab)?;
    let inventory = inventory_of(ckpt)?;
    let (examples, _) = relation_examples(docs, vocab, &inventory, ckpt.inference_window())?;
    let found = |e: &RelationExample| {
        predicted.get(&e.doc_id).is_some_and(|ms| {
            let has = |s: CharSpan| ms.iter().any(|m| (m.start, m.end) == s);
            has(e.head_span) && has(e.tail_span)
        })
    };
    let matched: Vec<RelationExample> = examples.iter().filter(|e| found(e)).cloned().collect();
    let probs = score(ckpt, vocab, &matched)?;
    let labels = inventory.labels();
    let record = |e: &RelationExample, label: usize| RelationRecord {
        doc_id: e.doc_id.clone(),
        head: e.head_span,
        tail: e.tail_span,
        label: labels[label].clone(),
    };
    let gold: Vec<RelationRecord> = examples.iter().map(|e| record(e, e.label)).collect();
    let pred: Vec<RelationRecord> = matched.iter().zip(&probs).map(|(e, p)| record(e, argmax(p))).collect();
    info!(
        "{} of {} gold relations have both mentions among the predicted entities",
        matched.len(),
        examples.len()
    );
    re_metrics(&gold, &pred, Protocol::RePredictedPair)
}

/// Fine-tunes a relation classifier. `vocab` is the checkpoint's
/// vocabulary, with or without markers; the returned checkpoint is bound to
/// `vocab.with_markers()`. Every label present in any split must occur in
/// the training split.
pub fn finetune_re(
    ckpt: Checkpoint,
    splits: &Splits<AnnotatedDocument>,
    vocab: &Vocab,
    inventory: &RelationInventory,
    config: &TrainingConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let (mut ckpt, vocab) = prepare_relation_checkpoint(ckpt, vocab, inventory, config.seed)?;
    let max_len = config.max_sequence_length.min(ckpt.config.max_sequence_length);
    ckpt.heads.window = Some(max_len);
    let (train, tc) = relation_examples(&splits.train, &vocab, inventory, max_len)?;
    let (test, _) = relation_examples(&splits.test, &vocab, inventory, max_len)?;
    let (validation, _) = relation_examples(&splits.validation, &vocab, inventory, max_len)?;
    info!(
        "relation instances train/test/validation: {}/{}/{} ({} NO_RELATION and {} out-of-inventory dropped from train)",
        train.len(),
        test.len(),
        validation.len(),
        tc.no_relation,
        tc.out_of_inventory
    );
    if train.is_empty() {
        return Err(Error::config("relation training split has no instances"));
    }
    let mut in_train = vec![false; inventory.len()];
    for e in &train {
        in_train[e.label] = true;
    }
    let missing: Vec<&str> = test
        .iter()
        .chain(&validation)
        .filter(|e| !in_train[e.label])
        .map(|e| inventory.labels()[e.label].as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::config(format!(
            "training split lacks relation labels {missing:?}; use a stratified split"
        )));
    }

    let m = markers(&vocab)?;
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
            let seqs: Vec<TokenizedSequence> = chunk.iter().map(|&i| train[i].seq.clone()).collect();
            let targets: Vec<Option<usize>> = chunk.iter().map(|&i| Some(train[i].label)).collect();
            let batch = Batch::from_sequences(&seqs);
            let positions = marker_positions(&batch, &m)?;
            let mut g = Graph::new();
            let h = encoder_graph(&mut g, &ckpt.params, &ckpt.config, &batch, Some(&mut dropout_rng))?;
            let logits = relation_logits_graph(&mut g, &ckpt.params, h, batch.seq_len, &positions)?;
            let loss = g.cross_entropy(logits, &targets)?;
            let value = g.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("relation loss became {value} in epoch {epoch}")));
            }
            let grads = g.backward(loss)?;
            adamw_step(&mut ckpt.params, &grads, &mut opt)?;
            total += value;
            batches += 1;
        }
        ckpt.provenance.steps = start_steps + opt.step_count;
        let report = if validation.is_empty() {
            None
        } else {
            Some(evaluate_re(&ckpt, &vocab, &splits.validation)?)
        };
        let record = FinetuneEpoch {
            epoch,
            train_loss: total / batches as f64,
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
    if validation.is_empty() {
        warn!("no validation relations; returning the last epoch");
    }
    let (_, best_epoch, checkpoint, report) = best.expect("at least one epoch");
    Ok(FinetuneOutcome {
        checkpoint,
        best_epoch,
        history,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityLabel, EntityMention, RelationInstance};
    use crate::model::{init_model, ModelConfig};
    use crate::tokenizer::train_wordpiece;

    fn doc(id: &str, text: &str, mentions: &[(&str, EntityLabel)], rels: &[(usize, usize, &str)]) -> AnnotatedDocument {
        let ms = mentions
            .iter()
            .map(|(s, l)| {
                let b = text.find(s).unwrap();
                let start = text[..b].chars().count();
                EntityMention::new(text, start, start + s.chars().count(), *l)
            })
            .collect();
        AnnotatedDocument {
            doc_id: id.into(),
            text: text.into(),
            mentions: ms,
            relations: rels
                .iter()
                .map(|&(head, tail, label)| RelationInstance {
                    head,
                    tail,
                    label: label.into(),
                })
                .collect(),
        }
    }

    fn inventory() -> RelationInventory {
        RelationInventory::new(vec!["employer".into(), "employee".into(), "located_in".into()]).unwrap()
    }

    fn sample() -> AnnotatedDocument {
        doc(
            "a",
            "Ali works for Petronas in Penang.",
            &[("Ali", EntityLabel::Person), ("Petronas", EntityLabel::Organization), ("Penang", EntityLabel::Location)],
            &[(0, 1, "employer"), (1, 2, "located_in"), (0, 2, NO_RELATION), (2, 0, "org:founded_by")],
        )
    }

    fn vocab_for(docs: &[AnnotatedDocument]) -> Vocab {
        train_wordpiece(docs.iter().map(|d| d.text.as_str()), 80, 1).unwrap()
    }

    fn between(seq: &TokenizedSequence, open: &str, close: &str) -> Vec<String> {
        let a = seq.tokens.iter().position(|t| t == open).unwrap();
        let b = seq.tokens.iter().position(|t| t == close).unwrap();
        seq.tokens[a + 1..b].to_vec()
    }

    #[test]
    fn filters_and_marks() {
        let d = sample();
        let v = vocab_for(&[d.clone()]).with_markers();
        let (ex, counts) = build_relation_instances(&d, &v, &inventory(), 64).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(
            counts,
            BuildCounts {
                kept: 2,
                no_relation: 1,
                out_of_inventory: 1,
                unfit: 0
            }
        );
        for e in &ex {
            for mk in crate::tokenizer::MARKER_TOKENS {
                assert_eq!(e.seq.tokens.iter().filter(|t| *t == mk).count(), 1);
            }
        }
        assert_eq!(between(&ex[0].seq, "<H>", "</H>"), ["Ali"]);
        assert_eq!(between(&ex[0].seq, "<T>", "</T>"), ["Petronas"]);
        assert_eq!(ex[1].label, 2);
    }

    #[test]
    fn vocabulary_without_markers_is_rejected() {
        let d = sample();
        let v = vocab_for(&[d.clone()]);
        assert!(matches!(build_relation_instances(&d, &v, &inventory(), 64), Err(Error::Config(_))));
    }

    #[test]
    fn window_keeps_both_mentions() {
        let filler = "lorem ipsum ".repeat(30);
        let text = format!("{filler}Ali works for Petronas today. {filler}");
        let d = doc(
            "long",
            &text,
            &[("Ali", EntityLabel::Person), ("Petronas", EntityLabel::Organization)],
            &[(0, 1, "employer")],
        );
        let v = vocab_for(&[d.clone()]).with_markers();
        let (ex, _) = build_relation_instances(&d, &v, &inventory(), 16).unwrap();
        let seq = &ex[0].seq;
        assert_eq!(seq.len(), 16);
        assert_eq!(between(seq, "<H>", "</H>"), ["Ali"]);
        let h = seq.tokens.iter().position(|t| t == "<H>").unwrap();
        let t = seq.tokens.iter().position(|t| t == "</T>").unwrap();
        // centred: the slack on both sides differs by at most one
        let (left, right) = (h - 1, seq.len() - 2 - t);
        assert!(left.abs_diff(right) <= 1, "{left} {right}");
    }

    #[test]
    fn distant_pair_is_skipped_and_counted() {
        let filler = "lorem ipsum ".repeat(30);
        let text = format!("Ali {filler} Petronas");
        let d = doc(
            "far",
            &text,
            &[("Ali", EntityLabel::Person), ("Petronas", EntityLabel::Organization)],
            &[(0, 1, "employer")],
        );
        let v = vocab_for(&[d.clone()]).with_markers();
        let (ex, counts) = build_relation_instances(&d, &v, &inventory(), 16).unwrap();
        assert!(ex.is_empty());
        assert_eq!(counts.unfit, 1);
    }

    fn tiny(vocab: &Vocab) -> Checkpoint {
        let c = ModelConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_size: 16,
            ffn_size: 32,
            vocab_size: vocab.len(),
            max_sequence_length: 32,
            type_vocab_size: 2,
            dropout_rate: 0.0,
            layer_norm_eps: 1e-12,
        };
        let mut ck = init_model(&c, 3).unwrap();
        ck.attach_vocab(vocab).unwrap();
        ck
    }

    #[test]
    fn training_split_missing_a_label_is_config_error() {
        let d = sample();
        let other = doc(
            "b",
            "Siti works for Maybank.",
            &[("Siti", EntityLabel::Person), ("Maybank", EntityLabel::Organization)],
            &[(1, 0, "employee")],
        );
        let v2 = vocab_for(&[d.clone(), other.clone()]);
        let splits = Splits {
            train: vec![d],
            test: vec![],
            validation: vec![other],
        };
        let r = finetune_re(tiny(&v2), &splits, &v2, &inventory(), &TrainingConfig::re_reference());
        assert!(matches!(r, Err(Error::Config(m)) if m.contains("employee")));
    }

    #[test]
    fn empty_training_split_is_config_error() {
        let d = sample();
        let v = vocab_for(&[d]);
        let splits = Splits {
            train: vec![],
            test: vec![],
            validation: vec![],
        };
        let r = finetune_re(tiny(&v), &splits, &v, &inventory(), &TrainingConfig::re_reference());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn prediction_is_a_distribution_and_deterministic() {
        let d = sample();
        let v = vocab_for(&[d.clone()]);
        let (ck, mv) = prepare_relation_checkpoint(tiny(&v), &v, &inventory(), 5).unwrap();
        assert_eq!(mv, v.with_markers());
        assert_eq!(ck.config.vocab_size, v.len() + 4);
        let a = predict_relation(&ck, &mv, &d, 0, 1).unwrap();
        let b = predict_relation(&ck, &mv, &d, 0, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.score > 0.0 && a.score <= 1.0);
        assert!((a.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(matches!(predict_relation(&ck, &mv, &d, 0, 0), Err(Error::Index(_))));
        assert!(matches!(predict_relation(&ck, &mv, &d, 0, 7), Err(Error::Index(_))));
    }

    #[test]
    fn predicted_pairs_count_missed_mentions() {
        let d = sample();
        let v = vocab_for(&[d.clone()]);
        let (ck, mv) = prepare_relation_checkpoint(tiny(&v), &v, &inventory(), 5).unwrap();
        let all = BTreeMap::from([(d.doc_id.clone(), d.mentions.clone())]);
        let full = evaluate_re_predicted_pairs(&ck, &mv, std::slice::from_ref(&d), &all).unwrap();
        let gold = evaluate_re(&ck, &mv, std::slice::from_ref(&d)).unwrap();
        assert_eq!(full.micro, gold.micro);
        assert_eq!(full.protocol, Protocol::RePredictedPair);
        // both in-inventory relations involve Petronas
        let partial = BTreeMap::from([(d.doc_id.clone(), vec![d.mentions[0].clone(), d.mentions[2].clone()])]);
        let r = evaluate_re_predicted_pairs(&ck, &mv, std::slice::from_ref(&d), &partial).unwrap();
        assert_eq!(r.micro.counts.tp + r.micro.counts.fp, 0);
        assert_eq!(r.micro.counts.fn_, 2);
    }

    #[test]
    fn markers_carry_direction() {
        let d = doc(
            "a",
            "Ali works for Petronas.",
            &[("Ali", EntityLabel::Person), ("Petronas", EntityLabel::Organization)],
            &[(0, 1, "employer"), (1, 0, "employee")],
        );
        let v = vocab_for(&[d.clone()]);
        let splits = Splits {
            train: vec![d.clone()],
            test: vec![],
            validation: vec![d.clone()],
        };
        let config = TrainingConfig {
            epochs: 40,
            batch_size: 2,
            learning_rate: 1e-2,
            max_sequence_length: 32,
            ..TrainingConfig::re_reference()
        };
        let out = finetune_re(tiny(&v), &splits, &v, &inventory(), &config).unwrap();
        let mv = v.with_markers();
        let fwd = predict_relation(&out.checkpoint, &mv, &d, 0, 1).unwrap();
        let back = predict_relation(&out.checkpoint, &mv, &d, 1, 0).unwrap();
        assert_eq!(fwd.label, "employer");
        assert_eq!(back.label, "employee");
        assert_eq!(out.report.unwrap().micro.f1, 1.0);
    }
}
