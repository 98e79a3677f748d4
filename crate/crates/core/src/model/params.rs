use rand::Rng;
use rand_distr::StandardNormal;

use super::checkpoint::{Checkpoint, Provenance};
use super::config::{Heads, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::rng::{stream, Stream};

const INIT_STD: f64 = 0.02;

/// Every parameter the architecture owns, with its shape, in a fixed order.
/// The masked-LM output projection has no entry of its own: it reuses
/// `embeddings.word`.
pub fn manifest(config: &ModelConfig, heads: &Heads) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden_size;
    let f = config.ffn_size;
    let mut m: Vec<(String, Vec<usize>)> = vec![
        ("embeddings.word".into(), vec![config.vocab_size, h]),
        ("embeddings.position".into(), vec![config.max_sequence_length, h]),
        ("embeddings.token_type".into(), vec![config.type_vocab_size, h]),
        ("embeddings.norm.gain".into(), vec![h]),
        ("embeddings.norm.bias".into(), vec![h]),
    ];
    for l in 0..config.num_layers {
        let p = format!("layer.{l}");
        for proj in ["query", "key", "value", "output"] {
            m.push((format!("{p}.attention.{proj}.weight"), vec![h, h]));
            m.push((format!("{p}.attention.{proj}.bias"), vec![h]));
        }
        m.push((format!("{p}.attention.norm.gain"), vec![h]));
        m.push((format!("{p}.attention.norm.bias"), vec![h]));
        m.push((format!("{p}.ffn.intermediate.weight"), vec![h, f]));
        m.push((format!("{p}.ffn.intermediate.bias"), vec![f]));
        m.push((format!("{p}.ffn.output.weight"), vec![f, h]));
        m.push((format!("{p}.ffn.output.bias"), vec![h]));
        m.push((format!("{p}.ffn.norm.gain"), vec![h]));
        m.push((format!("{p}.ffn.norm.bias"), vec![h]));
    }
    m.push(("mlm.transform.weight".into(), vec![h, h]));
    m.push(("mlm.transform.bias".into(), vec![h]));
    m.push(("mlm.norm.gain".into(), vec![h]));
    m.push(("mlm.norm.bias".into(), vec![h]));
    m.push(("mlm.output_bias".into(), vec![config.vocab_size]));
    if let Some(tags) = heads.token_tags {
        m.push(("ner.weight".into(), vec![h, tags]));
        m.push(("ner.bias".into(), vec![tags]));
    }
    if let Some(labels) = &heads.relation_labels {
        m.push(("re.weight".into(), vec![2 * h, labels.len()]));
        m.push(("re.bias".into(), vec![labels.len()]));
    }
    m
}

pub fn parameter_count(config: &ModelConfig, heads: &Heads) -> usize {
    manifest(config, heads)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return (z * INIT_STD) as f32;
        }
    }
}

/// Initial value for one manifest entry: norm gains are 1, biases 0, weight
/// matrices and embedding tables truncated-normal with std 0.02.
fn init_tensor<R: Rng + ?Sized>(name: &str, shape: &[usize], rng: &mut R) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = if name.ends_with(".gain") {
        vec![1.0; n]
    } else if name.ends_with("bias") {
        vec![0.0; n]
    } else {
        (0..n).map(|_| truncated_normal(rng)).collect()
    };
    Tensor::new(shape.to_vec(), data).expect("manifest shape")
}

/// Fresh weights for `config`, deterministic under `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let heads = Heads::default();
    let mut rng = stream(seed, Stream::Init);
    let mut params = ParamStore::new();
    for (name, shape) in manifest(config, &heads) {
        let t = init_tensor(&name, &shape, &mut rng);
        params.insert(name, t);
    }
    Ok(Checkpoint {
        config: config.clone(),
        heads,
        params,
        vocab_fingerprint: String::new(),
        provenance: Provenance {
            strategy: None,
            steps: 0,
            seed,
        },
    })
}

impl Checkpoint {
    /// Adds (or replaces) a token-classification head with `num_tags` outputs.
    pub fn with_token_head(mut self, num_tags: usize, seed: u64) -> Result<Self> {
        if num_tags == 0 {
            return Err(Error::config("token head needs at least one tag"));
        }
        let mut rng = stream(seed, Stream::HeadInit);
        let h = self.config.hidden_size;
        self.params.insert("ner.weight".into(), init_tensor("ner.weight", &[h, num_tags], &mut rng));
        self.params.insert("ner.bias".into(), init_tensor("ner.bias", &[num_tags], &mut rng));
        self.heads.token_tags = Some(num_tags);
        Ok(self)
    }

    /// Adds (or replaces) a relation head over `labels`.
    pub fn with_relation_head(mut self, labels: Vec<String>, seed: u64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("relation head needs at least one label"));
        }
        let mut rng = stream(seed, Stream::HeadInit);
        let h = self.config.hidden_size;
        let n = labels.len();
        self.params.insert("re.weight".into(), init_tensor("re.weight", &[2 * h, n], &mut rng));
        self.params.insert("re.bias".into(), init_tensor("re.bias", &[n], &mut rng));
        self.heads.relation_labels = Some(labels);
        Ok(self)
    }

    /// Grows the vocabulary to `new_size`, initializing the new embedding rows
    /// and zeroing their output biases. Existing rows are untouched.
    pub fn with_vocab_size(mut self, new_size: usize, seed: u64) -> Result<Self> {
        let old = self.config.vocab_size;
        if new_size < old {
            return Err(Error::config(format!(
                "cannot shrink vocabulary from {old} to {new_size}"
            )));
        }
        if new_size == old {
            return Ok(self);
        }
        let h = self.config.hidden_size;
        let mut rng = stream(seed, Stream::HeadInit);
        let word = self.params.remove("embeddings.word").expect("manifest");
        let mut data = word.into_data();
        data.extend((0..(new_size - old) * h).map(|_| truncated_normal(&mut rng)));
        self.params
            .insert("embeddings.word".into(), Tensor::new(vec![new_size, h], data)?);
        let bias = self.params.remove("mlm.output_bias").expect("manifest");
        let mut data = bias.into_data();
        data.resize(new_size, 0.0);
        self.params
            .insert("mlm.output_bias".into(), Tensor::new(vec![new_size], data)?);
        self.config.vocab_size = new_size;
        Ok(self)
    }
}
