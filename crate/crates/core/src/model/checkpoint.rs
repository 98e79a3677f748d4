//! Checkpoint container: the magic bytes `LMKCKPT1`, a little-endian u64
//! header length, a JSON header (config, heads, fingerprint, provenance and a
//! tensor table with byte offsets), then the raw little-endian f32 payload.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Heads, ModelConfig};
use super::params::manifest;
use crate::config::Strategy;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{ParamStore, Tensor};
use crate::tokenizer::Vocab;

const MAGIC: &[u8; 8] = b"LMKCKPT1";
const FORMAT: &str = "lmkit-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: Option<Strategy>,
    pub steps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub heads: Heads,
    pub params: ParamStore<f32>,
    pub vocab_fingerprint: String,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    heads: Heads,
    vocab_fingerprint: String,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Records `vocab` as the vocabulary this checkpoint's ids refer to.
    /// Window length for task inference: the fine-tuning length if
    /// recorded, else the model's maximum.
    pub fn inference_window(&self) -> usize {
        self.heads
            .window
            .unwrap_or(self.config.max_sequence_length)
            .min(self.config.max_sequence_length)
    }

    pub fn attach_vocab(&mut self, vocab: &Vocab) -> Result<()> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::config(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        self.vocab_fingerprint = vocab.fingerprint();
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let actual = vocab.fingerprint();
        if actual != self.vocab_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.vocab_fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// Checks that the parameters are exactly the manifest, shape for shape.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = manifest(&self.config, &self.heads);
        let names: BTreeSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        for (name, shape) in &expected {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::Load(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Load(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !names.contains(k.as_str())) {
            return Err(Error::Load(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.validate()?;
    if ckpt.vocab_fingerprint.is_empty() {
        return Err(Error::config("checkpoint has no vocabulary fingerprint"));
    }
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, _) in manifest(&ckpt.config, &ckpt.heads) {
        let t = &ckpt.params[&name];
        let offset = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    let header = Header {
        format: FORMAT.into(),
        config: ckpt.config.clone(),
        heads: ckpt.heads.clone(),
        vocab_fingerprint: ckpt.vocab_fingerprint.clone(),
        provenance: ckpt.provenance.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Load("not a checkpoint file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Load("file truncated inside header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])
        .map_err(|e| Error::Load(format!("malformed header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Load(format!("unsupported format {:?}", header.format)));
    }
    if header.vocab_fingerprint.is_empty() {
        return Err(Error::Load("vocabulary fingerprint absent".into()));
    }
    let payload = &bytes[body..];
    let mut params = ParamStore::new();
    for t in &header.tensors {
        if t.dtype != "f32" {
            return Err(Error::Load(format!("parameter {} has dtype {}", t.name, t.dtype)));
        }
        let n: usize = t.shape.iter().product();
        if t.length as usize != 4 * n {
            return Err(Error::Load(format!(
                "parameter {} declares {} bytes for shape {:?}",
                t.name, t.length, t.shape
            )));
        }
        let start = t.offset as usize;
        let end = start + t.length as usize;
        if end > payload.len() {
            return Err(Error::Load(format!("file truncated inside parameter {}", t.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if params.insert(t.name.clone(), Tensor::new(t.shape.clone(), data)?).is_some() {
            return Err(Error::Load(format!("parameter {} listed twice", t.name)));
        }
    }
    let ckpt = Checkpoint {
        config: header.config,
        heads: header.heads,
        params,
        vocab_fingerprint: header.vocab_fingerprint,
        provenance: header.provenance,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::tokenizer::SPECIAL_TOKENS;

    fn vocab(extra: &[&str]) -> Vocab {
        let mut t: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        t.extend(extra.iter().map(|s| s.to_string()));
        Vocab::from_tokens(t).unwrap()
    }

    fn saved() -> (tempfile::TempDir, std::path::PathBuf, Checkpoint) {
        let v = vocab(&["a", "b", "c"]);
        let mut ck = init_model(&ModelConfig::desk(v.len()), 3)
            .unwrap()
            .with_relation_head(vec!["x".into(), "y".into()], 3)
            .unwrap();
        ck.attach_vocab(&v).unwrap();
        ck.provenance.strategy = Some(Strategy::Scratch);
        ck.provenance.steps = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        (dir, path, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (_d, path, ck) = saved();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        for (name, t) in &ck.params {
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.params[name].data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_file_names_the_tensor() {
        let (_d, path, _) = saved();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Load(m)) => assert!(m.contains("truncated inside parameter"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fingerprint_mismatch() {
        let (_d, path, _) = saved();
        let ck = load_checkpoint(&path).unwrap();
        ck.check_vocab(&vocab(&["a", "b", "c"])).unwrap();
        assert!(matches!(
            ck.check_vocab(&vocab(&["a", "b", "d"])),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn missing_and_misshapen_parameters() {
        let (_d, _, ck) = saved();
        let mut missing = ck.clone();
        missing.params.remove("layer.1.ffn.norm.bias");
        match missing.validate() {
            Err(Error::Load(m)) => assert!(m.contains("layer.1.ffn.norm.bias")),
            other => panic!("{other:?}"),
        }
        let mut bad = ck;
        bad.params.insert("re.bias".into(), Tensor::zeros(vec![3]));
        match bad.validate() {
            Err(Error::Load(m)) => assert!(m.contains("re.bias")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn absent_fingerprint_rejected() {
        let ck = init_model(&ModelConfig::desk(8), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(save_checkpoint(&ck, &dir.path().join("x")).is_err());
    }
}
