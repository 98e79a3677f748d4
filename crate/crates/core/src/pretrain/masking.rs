use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tokenizer::Vocab;

/// Which tokens the masked-LM objective hides and what replaces them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub select_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            select_prob: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        let all = [self.select_prob, self.mask_frac, self.random_frac, self.keep_frac];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config(format!("masking probabilities must lie in [0, 1], got {all:?}")));
        }
        let sum = self.mask_frac + self.random_frac + self.keep_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("masking fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Applies the policy to every attended, non-special position. Returns the
/// corrupted batch and one label per position: the original id where the
/// position was selected, `None` elsewhere.
pub fn mask_batch<R: Rng + ?Sized>(
    batch: &Batch,
    policy: &MaskingPolicy,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<(Batch, Vec<Option<usize>>)> {
    policy.validate()?;
    let replaceable: Vec<usize> = (0..vocab.len()).filter(|&id| !vocab.is_special(id)).collect();
    let mut out = batch.clone();
    let mut labels = vec![None; batch.ids.len()];
    for (i, label) in labels.iter_mut().enumerate() {
        let id = batch.ids[i];
        if batch.mask[i] == 0 || vocab.is_special(id) {
            continue;
        }
        if rng.random::<f64>() >= policy.select_prob {
            continue;
        }
        *label = Some(id);
        let r = rng.random::<f64>();
        if r < policy.mask_frac {
            out.ids[i] = Vocab::MASK;
        } else if r < policy.mask_frac + policy.random_frac && !replaceable.is_empty() {
            out.ids[i] = replaceable[rng.random_range(0..replaceable.len())];
        }
    }
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::tokenizer::SPECIAL_TOKENS;

    fn vocab() -> Vocab {
        let mut t: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        t.extend((0..50).map(|i| format!("w{i}")));
        Vocab::from_tokens(t).unwrap()
    }

    #[test]
    fn zero_probability_is_identity() {
        let v = vocab();
        let b = Batch::from_ids(&[vec![2, 10, 11, 12, 3]]);
        let p = MaskingPolicy {
            select_prob: 0.0,
            ..Default::default()
        };
        let (m, labels) = mask_batch(&b, &p, &v, &mut stream(0, Stream::Masking)).unwrap();
        assert_eq!(m, b);
        assert!(labels.iter().all(Option::is_none));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let p = MaskingPolicy {
            keep_frac: 0.2,
            ..Default::default()
        };
        let b = Batch::from_ids(&[vec![2, 3]]);
        assert!(matches!(
            mask_batch(&b, &p, &vocab(), &mut stream(0, Stream::Masking)),
            Err(Error::Config(_))
        ));
    }
}
