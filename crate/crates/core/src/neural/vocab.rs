use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ index map with PAD at 0 and UNK at 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Every token of `seqs`, most frequent first, ties in lexicographic order.
    pub fn build(seqs: &[TokenSequence]) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in seqs {
            for t in s.iter() {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        words.extend(
            ranked
                .into_iter()
                .filter(|(w, _)| *w != PAD_TOKEN && *w != UNK_TOKEN)
                .map(|(w, _)| w.to_string()),
        );
        Vocab::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    /// Ids of the first `max_len` tokens (no padding).
    pub fn encode(&self, seq: &TokenSequence, max_len: usize) -> Vec<usize> {
        seq.iter().take(max_len).map(|t| self.id(t)).collect()
    }
}

/// Fixed-width id matrix with a mask marking real tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    /// Number of sequences that were cut to `max_len`.
    pub truncated: usize,
}

impl EncodedBatch {
    /// Ids of the real (unmasked) positions of row `i`.
    pub fn real(&self, i: usize) -> Vec<usize> {
        self.ids[i]
            .iter()
            .zip(&self.mask[i])
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Truncates and right-pads every sequence to `max_len`.
pub fn encode_batch(seqs: &[TokenSequence], vocab: &Vocab, max_len: usize) -> EncodedBatch {
    let mut ids = Vec::with_capacity(seqs.len());
    let mut mask = Vec::with_capacity(seqs.len());
    let mut truncated = 0;
    for s in seqs {
        if s.len() > max_len {
            truncated += 1;
        }
        let mut row = vocab.encode(s, max_len);
        let real = row.len();
        row.resize(max_len, PAD);
        ids.push(row);
        mask.push((0..max_len).map(|j| j < real).collect());
    }
    EncodedBatch {
        ids,
        mask,
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: &[&str]) -> TokenSequence {
        t.iter().copied().collect()
    }

    #[test]
    fn layout_examples() {
        let vocab = Vocab::build(&[seq(&["b", "a", "b"])]);
        assert_eq!(vocab.words(), ["<pad>", "<unk>", "b", "a"]);
        let batch = encode_batch(&[seq(&[]), seq(&["a", "b"])], &vocab, 4);
        assert_eq!(batch.ids[0], vec![PAD; 4]);
        assert_eq!(batch.mask[0], vec![false; 4]);
        assert_eq!(batch.ids[1], vec![3, 2, 0, 0]);
        assert_eq!(batch.mask[1], vec![true, true, false, false]);
        assert_eq!(batch.truncated, 0);
    }

    #[test]
    fn long_sequences_keep_prefix() {
        let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let s = TokenSequence(words.clone());
        let vocab = Vocab::build(std::slice::from_ref(&s));
        let batch = encode_batch(&[s], &vocab, 30);
        assert_eq!(batch.truncated, 1);
        let kept: Vec<&str> = batch.ids[0].iter().map(|&i| vocab.words()[i].as_str()).collect();
        assert_eq!(kept, words[..30].iter().map(String::as_str).collect::<Vec<_>>());
        assert!(batch.mask[0].iter().all(|&m| m));
        assert_eq!(vocab.id("never-seen"), UNK);
    }
}
