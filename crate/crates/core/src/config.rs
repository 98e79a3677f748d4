//! Training hyperparameters shared by pre-training and both fine-tuning tasks.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-training strategy: continue from an existing checkpoint (`FP`) or
/// start from fresh weights and a freshly trained vocabulary (`SC`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "FP")]
    FurtherPretrain,
    #[serde(rename = "SC")]
    Scratch,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FurtherPretrain => "FP",
            Strategy::Scratch => "SC",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FP" | "fp" => Ok(Strategy::FurtherPretrain),
            "SC" | "sc" => Ok(Strategy::Scratch),
            _ => Err(Error::config(format!("unknown strategy {s:?} (expected FP or SC)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_sequence_length: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

impl TrainingConfig {
    /// Reference pre-training settings. The multilingual FP run used batch 16,
    /// the others 32.
    pub fn pretrain_reference(strategy: Strategy, multilingual: bool) -> Self {
        TrainingConfig {
            epochs: 30,
            batch_size: if multilingual { 16 } else { 32 },
            learning_rate: 5e-5,
            weight_decay: 0.001,
            max_sequence_length: 512,
            seed: 42,
            strategy: Some(strategy),
            init_checkpoint: None,
        }
    }

    /// Reference NER fine-tuning settings.
    pub fn ner_reference() -> Self {
        TrainingConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            max_sequence_length: 512,
            seed: 42,
            strategy: None,
            init_checkpoint: None,
        }
    }

    /// Reference relation-extraction fine-tuning settings.
    pub fn re_reference() -> Self {
        TrainingConfig {
            weight_decay: 0.1,
            ..Self::ner_reference()
        }
    }

    /// Checks the numeric fields.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.max_sequence_length < 2 {
            return Err(Error::config("max_sequence_length must be at least 2"));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the strategy contract: FP needs an
    /// initial checkpoint, SC must not have one.
    pub fn validate_pretrain(&self) -> Result<Strategy> {
        self.validate()?;
        match (self.strategy, &self.init_checkpoint) {
            (None, _) => Err(Error::config("pre-training requires a strategy (FP or SC)")),
            (Some(Strategy::FurtherPretrain), None) => Err(Error::config(
                "strategy FP requires --init-checkpoint",
            )),
            (Some(Strategy::Scratch), Some(_)) => Err(Error::config(
                "strategy SC must not be given an initial checkpoint",
            )),
            (Some(s), _) => Ok(s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let ner = TrainingConfig::ner_reference();
        assert_eq!((ner.epochs, ner.batch_size), (30, 4));
        assert_eq!((ner.learning_rate, ner.weight_decay), (5e-5, 0.01));
        let re = TrainingConfig::re_reference();
        assert_eq!((re.epochs, re.batch_size), (30, 4));
        assert_eq!((re.learning_rate, re.weight_decay), (5e-5, 0.1));
        let pt = TrainingConfig::pretrain_reference(Strategy::FurtherPretrain, true);
        assert_eq!((pt.epochs, pt.batch_size, pt.max_sequence_length), (30, 16, 512));
        assert_eq!((pt.learning_rate, pt.weight_decay), (5e-5, 0.001));
    }

    #[test]
    fn strategy_contract() {
        let mut c = TrainingConfig::pretrain_reference(Strategy::FurtherPretrain, false);
        assert!(c.validate_pretrain().is_err());
        c.init_checkpoint = Some("base.ckpt".into());
        assert_eq!(c.validate_pretrain().unwrap(), Strategy::FurtherPretrain);
        c.strategy = Some(Strategy::Scratch);
        assert!(c.validate_pretrain().is_err());
    }

    #[test]
    fn strategy_serde() {
        assert_eq!(serde_json::to_string(&Strategy::Scratch).unwrap(), "\"SC\"");
        assert_eq!("FP".parse::<Strategy>().unwrap(), Strategy::FurtherPretrain);
    }
}
