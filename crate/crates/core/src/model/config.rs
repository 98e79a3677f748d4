use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    /// Also the size of the positional-embedding table.
    pub max_sequence_length: usize,
    pub type_vocab_size: usize,
    pub dropout_rate: f64,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-12
}

impl ModelConfig {
    /// 2 layers, 4 heads, hidden 128, FFN 512, 128 positions, dropout 0.1.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 4,
            hidden_size: 128,
            ffn_size: 512,
            vocab_size,
            max_sequence_length: 128,
            type_vocab_size: 2,
            dropout_rate: 0.1,
            layer_norm_eps: default_ln_eps(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_size", self.hidden_size),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
            ("max_sequence_length", self.max_sequence_length),
            ("type_vocab_size", self.type_vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::config("layer_norm_eps must be positive"));
        }
        Ok(())
    }
}

/// Task heads present in a checkpoint besides the masked-LM head.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heads {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_tags: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_labels: Option<Vec<String>>,
    /// Sequence length the task head was fine-tuned with; inference cuts
    /// windows of this length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility() {
        let mut c = ModelConfig::desk(100);
        c.validate().unwrap();
        c.hidden_size = 130;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
