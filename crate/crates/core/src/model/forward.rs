use rand::{Rng, RngCore};

use super::batch::Batch;
use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::tokenizer::MarkerIds;

/// Additive attention bias for padded keys.
const MASKED_SCORE: f64 = -1e9;

fn param<T: Scalar>(g: &mut Graph<T>, params: &ParamStore<T>, name: &str) -> Result<Var> {
    let t = params
        .get(name)
        .ok_or_else(|| Error::Load(format!("missing parameter {name}")))?;
    Ok(g.param(name, t))
}

fn dense<T: Scalar>(g: &mut Graph<T>, params: &ParamStore<T>, x: Var, prefix: &str) -> Result<Var> {
    let w = param(g, params, &format!("{prefix}.weight"))?;
    let b = param(g, params, &format!("{prefix}.bias"))?;
    let y = g.matmul(x, w);
    Ok(g.add_row(y, b))
}

fn norm<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamStore<T>,
    x: Var,
    prefix: &str,
    eps: f64,
) -> Result<Var> {
    let gain = param(g, params, &format!("{prefix}.gain"))?;
    let bias = param(g, params, &format!("{prefix}.bias"))?;
    Ok(g.layer_norm(x, gain, bias, T::of(eps)))
}

fn dropout<T: Scalar>(g: &mut Graph<T>, x: Var, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Var {
    let Some(rng) = rng.as_deref_mut() else {
        return x;
    };
    if rate <= 0.0 {
        return x;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let n = g.value(x).len();
    let factor = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    g.mul_const(x, factor)
}

fn check_batch(config: &ModelConfig, batch: &Batch) -> Result<()> {
    if batch.seq_len > config.max_sequence_length {
        return Err(Error::shape(format!(
            "sequence length {} exceeds max_sequence_length {}",
            batch.seq_len, config.max_sequence_length
        )));
    }
    if batch.ids.len() != batch.batch * batch.seq_len
        || batch.mask.len() != batch.ids.len()
        || batch.type_ids.len() != batch.ids.len()
    {
        return Err(Error::shape("batch arrays disagree with batch x seq_len"));
    }
    if let Some(&id) = batch.ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Index(format!(
            "token id {id} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    if let Some(&t) = batch.type_ids.iter().find(|&&t| t >= config.type_vocab_size) {
        return Err(Error::Index(format!("token type {t} outside {}", config.type_vocab_size)));
    }
    Ok(())
}

/// Builds the encoder on `g` and returns the final hidden states as a
/// `(batch * seq_len) x hidden` node. Dropout is applied only when an RNG is
/// supplied.
pub fn encoder_graph<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamStore<T>,
    config: &ModelConfig,
    batch: &Batch,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    config.validate()?;
    check_batch(config, batch)?;
    let (b, s) = (batch.batch, batch.seq_len);
    if b == 0 || s == 0 {
        return Err(Error::shape("empty batch"));
    }
    let eps = config.layer_norm_eps;
    let rate = config.dropout_rate;

    let word = param(g, params, "embeddings.word")?;
    let position = param(g, params, "embeddings.position")?;
    let token_type = param(g, params, "embeddings.token_type")?;
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
    let we = g.gather(word, &batch.ids);
    let pe = g.gather(position, &positions);
    let te = g.gather(token_type, &batch.type_ids);
    let x = g.add(we, pe);
    let x = g.add(x, te);
    let x = norm(g, params, x, "embeddings.norm", eps)?;
    let mut x = dropout(g, x, rate, &mut rng);

    let biases: Vec<Vec<T>> = (0..b)
        .map(|i| {
            batch.mask[i * s..(i + 1) * s]
                .iter()
                .map(|&m| if m == 0 { T::of(MASKED_SCORE) } else { T::zero() })
                .collect()
        })
        .collect();
    let dh = config.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());

    for l in 0..config.num_layers {
        let p = format!("layer.{l}");
        let q = dense(g, params, x, &format!("{p}.attention.query"))?;
        let k = dense(g, params, x, &format!("{p}.attention.key"))?;
        let v = dense(g, params, x, &format!("{p}.attention.value"))?;
        let mut rows = Vec::with_capacity(b);
        for (i, bias) in biases.iter().enumerate() {
            let r = i * s..(i + 1) * s;
            let mut heads = Vec::with_capacity(config.num_heads);
            for h in 0..config.num_heads {
                let c = h * dh..(h + 1) * dh;
                let qs = g.slice(q, r.clone(), c.clone());
                let ks = g.slice(k, r.clone(), c.clone());
                let vs = g.slice(v, r.clone(), c);
                let scores = g.matmul_bt(qs, ks);
                let scores = g.scale(scores, scale);
                let scores = g.add_const_row(scores, bias);
                let probs = g.softmax(scores);
                let probs = dropout(g, probs, rate, &mut rng);
                heads.push(g.matmul(probs, vs));
            }
            rows.push(g.concat_cols(&heads));
        }
        let ctx = g.concat_rows(&rows);
        let a = dense(g, params, ctx, &format!("{p}.attention.output"))?;
        let a = dropout(g, a, rate, &mut rng);
        let a = g.add(a, x);
        let a = norm(g, params, a, &format!("{p}.attention.norm"), eps)?;

        let f = dense(g, params, a, &format!("{p}.ffn.intermediate"))?;
        let f = g.gelu(f);
        let f = dense(g, params, f, &format!("{p}.ffn.output"))?;
        let f = dropout(g, f, rate, &mut rng);
        let f = g.add(f, a);
        x = norm(g, params, f, &format!("{p}.ffn.norm"), eps)?;
    }
    Ok(x)
}

/// Masked-LM logits for the given rows of `hidden` (all rows if `None`).
/// The output projection is the word-embedding table itself.
pub fn mlm_logits_graph<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamStore<T>,
    config: &ModelConfig,
    hidden: Var,
    rows: Option<&[usize]>,
) -> Result<Var> {
    let h = match rows {
        Some(r) => g.select_rows(hidden, r),
        None => hidden,
    };
    let t = dense(g, params, h, "mlm.transform")?;
    let t = g.gelu(t);
    let t = norm(g, params, t, "mlm.norm", config.layer_norm_eps)?;
    let word = param(g, params, "embeddings.word")?;
    let bias = param(g, params, "mlm.output_bias")?;
    let logits = g.matmul_bt(t, word);
    Ok(g.add_row(logits, bias))
}

pub fn token_logits_graph<T: Scalar>(g: &mut Graph<T>, params: &ParamStore<T>, hidden: Var) -> Result<Var> {
    dense(g, params, hidden, "ner")
}

/// Relation logits from the hidden states at the opening head and tail
/// markers. `positions` holds one `(head, tail)` pair per sequence, as
/// offsets within the sequence.
pub fn relation_logits_graph<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamStore<T>,
    hidden: Var,
    seq_len: usize,
    positions: &[(usize, usize)],
) -> Result<Var> {
    let heads: Vec<usize> = positions.iter().enumerate().map(|(i, p)| i * seq_len + p.0).collect();
    let tails: Vec<usize> = positions.iter().enumerate().map(|(i, p)| i * seq_len + p.1).collect();
    let hv = g.select_rows(hidden, &heads);
    let tv = g.select_rows(hidden, &tails);
    let pair = g.concat_cols(&[hv, tv]);
    dense(g, params, pair, "re")
}

/// Positions of the opening head and tail markers in each sequence. Each of
/// the four markers must occur exactly once among the attended positions.
pub fn marker_positions(batch: &Batch, markers: &MarkerIds) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(batch.batch);
    for i in 0..batch.batch {
        let row = batch.row(i);
        let mask = batch.mask_row(i);
        let find = |id: usize, name: &str| -> Result<usize> {
            let hits: Vec<usize> = (0..row.len()).filter(|&j| mask[j] == 1 && row[j] == id).collect();
            match hits.as_slice() {
                [p] => Ok(*p),
                [] => Err(Error::InputContract(format!("sequence {i} has no {name} marker"))),
                _ => Err(Error::InputContract(format!(
                    "sequence {i} has {} {name} markers",
                    hits.len()
                ))),
            }
        };
        let h = find(markers.head_open, "<H>")?;
        let hc = find(markers.head_close, "</H>")?;
        let t = find(markers.tail_open, "<T>")?;
        let tc = find(markers.tail_close, "</T>")?;
        if hc < h || tc < t {
            return Err(Error::InputContract(format!("sequence {i} has a closing marker before its opening marker")));
        }
        out.push((h, t));
    }
    Ok(out)
}

fn to_tensor(g: &Graph<f32>, v: Var, shape: Vec<usize>) -> Result<Tensor<f32>> {
    Tensor::new(shape, g.value(v).to_vec())
}

/// Final hidden states, shape `[batch, seq_len, hidden]`.
pub fn forward_encoder(ckpt: &Checkpoint, batch: &Batch) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let h = encoder_graph(&mut g, &ckpt.params, &ckpt.config, batch, None)?;
    to_tensor(&g, h, vec![batch.batch, batch.seq_len, ckpt.config.hidden_size])
}

/// Masked-LM logits, shape `[batch, seq_len, vocab_size]`.
pub fn forward_mlm(ckpt: &Checkpoint, batch: &Batch) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let h = encoder_graph(&mut g, &ckpt.params, &ckpt.config, batch, None)?;
    let l = mlm_logits_graph(&mut g, &ckpt.params, &ckpt.config, h, None)?;
    to_tensor(&g, l, vec![batch.batch, batch.seq_len, ckpt.config.vocab_size])
}

/// Tag logits, shape `[batch, seq_len, num_tags]`.
pub fn forward_token_classification(ckpt: &Checkpoint, batch: &Batch, num_tags: usize) -> Result<Tensor<f32>> {
    if ckpt.heads.token_tags != Some(num_tags) {
        return Err(Error::config(format!(
            "checkpoint token head has {:?} tags, caller expects {num_tags}",
            ckpt.heads.token_tags
        )));
    }
    let mut g = Graph::new();
    let h = encoder_graph(&mut g, &ckpt.params, &ckpt.config, batch, None)?;
    let l = token_logits_graph(&mut g, &ckpt.params, h)?;
    to_tensor(&g, l, vec![batch.batch, batch.seq_len, num_tags])
}

/// Relation logits, shape `[batch, num_labels]`.
pub fn forward_relation(
    ckpt: &Checkpoint,
    batch: &Batch,
    markers: &MarkerIds,
    num_labels: usize,
) -> Result<Tensor<f32>> {
    let have = ckpt.heads.relation_labels.as_ref().map(Vec::len);
    if have != Some(num_labels) {
        return Err(Error::config(format!(
            "checkpoint relation head has {have:?} labels, caller expects {num_labels}"
        )));
    }
    let positions = marker_positions(batch, markers)?;
    let mut g = Graph::new();
    let h = encoder_graph(&mut g, &ckpt.params, &ckpt.config, batch, None)?;
    let l = relation_logits_graph(&mut g, &ckpt.params, h, batch.seq_len, &positions)?;
    to_tensor(&g, l, vec![batch.batch, num_labels])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Heads};
    use crate::numerics::{cast_store, grad_check, softmax_rows, GradCheckConfig};
    use crate::rng::{stream, Stream};

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            hidden_size: 8,
            ffn_size: 16,
            vocab_size: vocab,
            max_sequence_length: 12,
            type_vocab_size: 2,
            dropout_rate: 0.0,
            layer_norm_eps: 1e-12,
        }
    }

    #[test]
    fn shapes() {
        let ck = init_model(&tiny(30), 1).unwrap().with_token_head(25, 1).unwrap();
        let b = Batch::from_ids(&[vec![2, 9, 10, 3], vec![2, 11, 3]]);
        assert_eq!(forward_encoder(&ck, &b).unwrap().shape(), &[2, 4, 8]);
        let mlm = forward_mlm(&ck, &b).unwrap();
        assert_eq!(mlm.shape(), &[2, 4, 30]);
        for row in softmax_rows(mlm.data(), 30).unwrap().chunks(30) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert_eq!(forward_token_classification(&ck, &b, 25).unwrap().shape(), &[2, 4, 25]);
    }

    #[test]
    fn fresh_token_head_is_near_uniform() {
        let ck = init_model(&ModelConfig::desk(40), 3).unwrap().with_token_head(25, 3).unwrap();
        let b = Batch::from_ids(&[vec![2, 9, 10, 11, 12, 3]]);
        let logits = forward_token_classification(&ck, &b, 25).unwrap();
        let probs = softmax_rows(logits.data(), 25).unwrap();
        assert!(probs.iter().all(|&p| p < 0.2));
    }

    #[test]
    fn over_long_and_out_of_vocab_inputs() {
        let ck = init_model(&tiny(30), 1).unwrap();
        let long = Batch::from_ids(&[vec![5; 13]]);
        assert!(matches!(forward_encoder(&ck, &long), Err(Error::Shape(_))));
        let oov = Batch::from_ids(&[vec![2, 30, 3]]);
        assert!(matches!(forward_encoder(&ck, &oov), Err(Error::Index(_))));
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let ck = init_model(&tiny(30), 7).unwrap();
        let short = Batch::from_ids(&[vec![2, 9, 10, 11, 3]]);
        let mut padded = short.clone();
        padded.seq_len = 11;
        padded.ids.extend([0; 6]);
        padded.type_ids.extend([0; 6]);
        padded.mask.extend([0; 6]);
        let a = forward_mlm(&ck, &short).unwrap();
        let b = forward_mlm(&ck, &padded).unwrap();
        let n = a.len();
        for (x, y) in a.data().iter().zip(&b.data()[..n]) {
            assert!((x - y).abs() <= 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn no_dropout_is_deterministic() {
        let ck = init_model(&tiny(30), 2).unwrap();
        let b = Batch::from_ids(&[vec![2, 9, 10, 3]]);
        assert_eq!(forward_mlm(&ck, &b).unwrap(), forward_mlm(&ck, &b).unwrap());
    }

    #[test]
    fn dropout_changes_training_forward() {
        let mut c = tiny(30);
        c.dropout_rate = 0.5;
        let ck = init_model(&c, 2).unwrap();
        let b = Batch::from_ids(&[vec![2, 9, 10, 3]]);
        let run = |seed| {
            let mut g = Graph::new();
            let mut rng = stream(seed, Stream::Dropout);
            let h = encoder_graph(&mut g, &ck.params, &c, &b, Some(&mut rng)).unwrap();
            g.value(h).to_vec()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn mlm_projection_is_tied_to_embeddings() {
        let mut ck = init_model(&tiny(30), 4).unwrap();
        let b = Batch::from_ids(&[vec![2, 9, 3]]);
        let before = forward_mlm(&ck, &b).unwrap();
        // row 20 never appears in the input, so only the output projection sees it
        let word = ck.params.get_mut("embeddings.word").unwrap();
        for v in &mut word.data_mut()[20 * 8..21 * 8] {
            *v += 0.5;
        }
        let after = forward_mlm(&ck, &b).unwrap();
        for pos in 0..3 {
            for id in 0..30 {
                let (x, y) = (before.data()[pos * 30 + id], after.data()[pos * 30 + id]);
                if id == 20 {
                    assert_ne!(x, y);
                } else {
                    assert_eq!(x, y);
                }
            }
        }
    }

    fn markers() -> MarkerIds {
        MarkerIds {
            head_open: 26,
            head_close: 27,
            tail_open: 28,
            tail_close: 29,
        }
    }

    #[test]
    fn relation_direction_matters() {
        let labels = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let ck = init_model(&tiny(30), 5).unwrap().with_relation_head(labels, 5).unwrap();
        let fwd = Batch::from_ids(&[vec![2, 26, 9, 27, 10, 28, 11, 29, 3]]);
        let rev = Batch::from_ids(&[vec![2, 28, 9, 29, 10, 26, 11, 27, 3]]);
        let a = forward_relation(&ck, &fwd, &markers(), 3).unwrap();
        let b = forward_relation(&ck, &rev, &markers(), 3).unwrap();
        assert_eq!(a.shape(), &[1, 3]);
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn missing_or_duplicate_markers() {
        let labels = vec!["a".to_string()];
        let ck = init_model(&tiny(30), 5).unwrap().with_relation_head(labels, 5).unwrap();
        let none = Batch::from_ids(&[vec![2, 9, 10, 3]]);
        assert!(matches!(
            forward_relation(&ck, &none, &markers(), 1),
            Err(Error::InputContract(_))
        ));
        let dup = Batch::from_ids(&[vec![2, 26, 9, 27, 26, 10, 27, 28, 11, 29, 3]]);
        assert!(matches!(
            forward_relation(&ck, &dup, &markers(), 1),
            Err(Error::InputContract(_))
        ));
    }

    #[test]
    fn token_head_receives_gradient() {
        let ck = init_model(&tiny(30), 5).unwrap().with_token_head(5, 5).unwrap();
        let b = Batch::from_ids(&[vec![2, 9, 10, 3]]);
        let mut g = Graph::new();
        let h = encoder_graph(&mut g, &ck.params, &ck.config, &b, None).unwrap();
        let l = token_logits_graph(&mut g, &ck.params, h).unwrap();
        let loss = g.cross_entropy(l, &[None, Some(1), Some(3), None]).unwrap();
        let grads = g.backward(loss).unwrap();
        let norm: f32 = grads.get("ner.weight").unwrap().iter().map(|v| v * v).sum();
        assert!(norm > 0.0);
    }

    #[test]
    fn full_model_gradient_check() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let config = tiny(30);
        let ck = init_model(&config, 11)
            .unwrap()
            .with_token_head(5, 11)
            .unwrap()
            .with_relation_head(labels, 11)
            .unwrap();
        let params = cast_store::<f32, f64>(&ck.params);
        let batch = Batch::from_ids(&[
            vec![2, 26, 9, 27, 10, 28, 11, 29, 3],
            vec![2, 28, 12, 29, 26, 13, 27, 3],
        ]);
        let positions = marker_positions(&batch, &markers()).unwrap();
        let report = grad_check(
            |g: &mut Graph<f64>, p: &ParamStore<f64>| {
                let h = encoder_graph(g, p, &config, &batch, None)?;
                let mlm = mlm_logits_graph(g, p, &config, h, Some(&[2, 4, 12]))?;
                let mlm_loss = g.cross_entropy(mlm, &[Some(9), Some(10), Some(13)])?;
                let tags = token_logits_graph(g, p, h)?;
                let targets: Vec<Option<usize>> = (0..18).map(|i| (batch.mask[i] == 1).then_some(i % 5)).collect();
                let tag_loss = g.cross_entropy(tags, &targets)?;
                let rel = relation_logits_graph(g, p, h, batch.seq_len, &positions)?;
                let rel_loss = g.cross_entropy(rel, &[Some(0), Some(1)])?;
                let total = g.add(mlm_loss, tag_loss);
                Ok(g.add(total, rel_loss))
            },
            &params,
            GradCheckConfig::default(),
        )
        .unwrap();
        for (name, err) in &report.per_param {
            assert!(*err < 1e-3, "{name}: {err}");
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        // 2 layers, hidden 128, ffn 512, vocab 1000, 128 positions, 2 types
        let (v, h, f, p, t) = (1000usize, 128usize, 512usize, 128usize, 2usize);
        let embeddings = v * h + p * h + t * h + 2 * h;
        let attention = 4 * (h * h + h) + 2 * h;
        let ffn = h * f + f + f * h + h + 2 * h;
        let mlm = h * h + h + 2 * h + v;
        let expected = embeddings + 2 * (attention + ffn) + mlm;
        assert_eq!(expected, 559_208);
        let c = ModelConfig::desk(v);
        assert_eq!(crate::model::parameter_count(&c, &Heads::default()), expected);
        let ck = init_model(&c, 0).unwrap();
        let stored: usize = ck.params.values().map(|t| t.len()).sum();
        assert_eq!(stored, expected);
    }
}
