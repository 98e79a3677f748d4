use crate::tokenizer::{TokenizedSequence, Vocab};

/// Row-major `batch x seq_len` block of token ids with segment ids and an
/// attention mask (1 = real token, 0 = padding).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq_len: usize,
    pub ids: Vec<usize>,
    pub type_ids: Vec<usize>,
    pub mask: Vec<u8>,
}

impl Batch {
    /// Stacks sequences, padding each to the longest one. Existing padding in
    /// the inputs is kept as is.
    pub fn from_sequences(seqs: &[TokenizedSequence]) -> Self {
        let seq_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut b = Batch {
            batch: seqs.len(),
            seq_len,
            ids: Vec::with_capacity(seqs.len() * seq_len),
            type_ids: vec![0; seqs.len() * seq_len],
            mask: Vec::with_capacity(seqs.len() * seq_len),
        };
        for s in seqs {
            b.ids.extend(&s.ids);
            b.mask.extend(&s.attention_mask);
            for _ in s.len()..seq_len {
                b.ids.push(Vocab::PAD);
                b.mask.push(0);
            }
        }
        b
    }

    /// Stacks raw id rows; every given id is attended to.
    pub fn from_ids(rows: &[Vec<usize>]) -> Self {
        let seq_len = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut b = Batch {
            batch: rows.len(),
            seq_len,
            ids: Vec::with_capacity(rows.len() * seq_len),
            type_ids: vec![0; rows.len() * seq_len],
            mask: Vec::with_capacity(rows.len() * seq_len),
        };
        for r in rows {
            b.ids.extend(r);
            b.mask.extend(std::iter::repeat_n(1, r.len()));
            for _ in r.len()..seq_len {
                b.ids.push(Vocab::PAD);
                b.mask.push(0);
            }
        }
        b
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn mask_row(&self, i: usize) -> &[u8] {
        &self.mask[i * self.seq_len..(i + 1) * self.seq_len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_are_padded() {
        let b = Batch::from_ids(&[vec![2, 7, 3], vec![2, 3]]);
        assert_eq!((b.batch, b.seq_len), (2, 3));
        assert_eq!(b.row(1), [2, 3, Vocab::PAD]);
        assert_eq!(b.mask_row(1), [1, 1, 0]);
    }
}
