//! Masked-language-model pre-training, either continuing from a checkpoint
//! (FP) or from fresh weights (SC).

mod masking;

pub use masking::{mask_batch, MaskingPolicy};

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{Strategy, TrainingConfig};
use crate::error::{Error, Result};
use crate::model::{encoder_graph, init_model, mlm_logits_graph, Batch, Checkpoint, ModelConfig};
use crate::numerics::{adamw_step, AdamWConfig, Graph, OptimizerState, ParamStore};
use crate::rng::{stream, Stream};
use crate::tokenizer::{encode_pieces, TokenizedSequence, Vocab};

/// Per-epoch entry of the loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub step_count: u64,
}

/// Where the weights come from.
#[derive(Debug, Clone)]
pub enum Start {
    /// Fresh weights for this architecture; `vocab_size` is taken from the vocabulary.
    Scratch(ModelConfig),
    /// Continue from an existing checkpoint.
    Further(Checkpoint),
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub latest: Checkpoint,
    /// Checkpoint after the epoch with the lowest mean loss.
    pub best: Checkpoint,
    pub history: Vec<EpochLoss>,
}

/// Tokenizes each document and cuts it into non-overlapping windows of
/// `max_len - 2` subwords, each wrapped in `[CLS] ... [SEP]` without padding.
pub fn pretraining_sequences<S: AsRef<str>>(docs: &[S], vocab: &Vocab, max_len: usize) -> Vec<TokenizedSequence> {
    let window = max_len.saturating_sub(2).max(1);
    let mut out = Vec::new();
    for doc in docs {
        let pieces = encode_pieces(doc.as_ref(), vocab);
        for chunk in pieces.chunks(window) {
            out.push(TokenizedSequence::from_pieces(chunk, vocab, max_len, false));
        }
    }
    out
}

/// Masked-LM loss of one corrupted batch and its parameter gradients. `None`
/// when no position carries a label.
pub fn mlm_step(
    params: &ParamStore<f32>,
    config: &ModelConfig,
    batch: &Batch,
    labels: &[Option<usize>],
    dropout: Option<&mut dyn rand::RngCore>,
) -> Result<Option<(f64, crate::numerics::Gradients<f32>)>> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    if rows.is_empty() {
        return Ok(None);
    }
    let targets: Vec<Option<usize>> = rows.iter().map(|&i| labels[i]).collect();
    let mut g = Graph::new();
    let h = encoder_graph(&mut g, params, config, batch, dropout)?;
    let logits = mlm_logits_graph(&mut g, params, config, h, Some(&rows))?;
    let loss = g.cross_entropy(logits, &targets)?;
    let value = g.scalar(loss) as f64;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("masked-LM loss became {value}")));
    }
    Ok(Some((value, g.backward(loss)?)))
}

pub fn run_pretraining<S: AsRef<str>>(
    docs: &[S],
    vocab: &Vocab,
    start: Start,
    config: &TrainingConfig,
    policy: &MaskingPolicy,
) -> Result<PretrainOutcome> {
    run_pretraining_with(docs, vocab, start, config, policy, |_, _| Ok(()))
}

/// [`run_pretraining`] with a callback after every epoch, used for
/// epoch-level checkpointing.
pub fn run_pretraining_with<S, F>(
    docs: &[S],
    vocab: &Vocab,
    start: Start,
    config: &TrainingConfig,
    policy: &MaskingPolicy,
    mut on_epoch: F,
) -> Result<PretrainOutcome>
where
    S: AsRef<str>,
    F: FnMut(&EpochLoss, &Checkpoint) -> Result<()>,
{
    config.validate()?;
    policy.validate()?;
    let strategy = match (&start, config.strategy) {
        (Start::Scratch(_), None | Some(Strategy::Scratch)) => Strategy::Scratch,
        (Start::Further(_), None | Some(Strategy::FurtherPretrain)) => Strategy::FurtherPretrain,
        (_, Some(s)) => {
            return Err(Error::config(format!("strategy {s} does not match the supplied starting point")))
        }
    };
    let mut ckpt = match start {
        Start::Scratch(mc) => {
            let mc = ModelConfig {
                vocab_size: vocab.len(),
                ..mc
            };
            let mut c = init_model(&mc, config.seed)?;
            c.attach_vocab(vocab)?;
            c
        }
        Start::Further(c) => {
            c.check_vocab(vocab)?;
            c.validate()?;
            c
        }
    };
    ckpt.provenance.strategy = Some(strategy);
    ckpt.provenance.seed = config.seed;

    let max_len = config.max_sequence_length.min(ckpt.config.max_sequence_length);
    let seqs = pretraining_sequences(docs, vocab, max_len);
    if seqs.is_empty() {
        return Err(Error::config("pre-training corpus is empty"));
    }
    info!(
        "pre-training ({strategy}) on {} windows for {} epochs",
        seqs.len(),
        config.epochs
    );

    let mut opt = OptimizerState::new(AdamWConfig::new(config.learning_rate, config.weight_decay))?;
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut mask_rng = stream(config.seed, Stream::Masking);
    let mut dropout_rng = stream(config.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let start_steps = ckpt.provenance.steps;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let picked: Vec<TokenizedSequence> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let batch = Batch::from_sequences(&picked);
            let (masked, labels) = mask_batch(&batch, policy, vocab, &mut mask_rng)?;
            let Some((loss, grads)) = mlm_step(&ckpt.params, &ckpt.config, &masked, &labels, Some(&mut dropout_rng))?
            else {
                continue;
            };
            adamw_step(&mut ckpt.params, &grads, &mut opt)?;
            total += loss;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::config("no maskable tokens in the pre-training corpus"));
        }
        ckpt.provenance.steps = start_steps + opt.step_count;
        let record = EpochLoss {
            epoch,
            mean_loss: total / batches as f64,
            step_count: ckpt.provenance.steps,
        };
        info!("epoch {epoch}: mean loss {:.6}", record.mean_loss);
        if best.as_ref().is_none_or(|(l, _)| record.mean_loss < *l) {
            best = Some((record.mean_loss, ckpt.clone()));
        }
        on_epoch(&record, &ckpt)?;
        history.push(record);
    }
    if history.last().is_some_and(|l| l.mean_loss > history[0].mean_loss) {
        warn!("final epoch loss exceeds the first epoch's");
    }
    let best = best.map(|(_, c)| c).expect("at least one epoch");
    Ok(PretrainOutcome {
        latest: ckpt,
        best,
        history,
    })
}
