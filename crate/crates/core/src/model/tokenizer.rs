use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

/// Identifier of the normalization rule baked into checkpoints. There is a
/// single rule today (lowercase, punctuation split off, hyphens and
/// apostrophes kept word-internal); the id exists so the checkpoint format
/// can reject a tokenizer mismatch instead of silently mis-tokenizing.
pub const NORMALIZATION_RULE: u8 = 1;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Word-level tokenizer with a closed vocabulary.
///
/// Token ids are dense in `[0, vocab_size)` with the four reserved specials
/// at the front. `decode(encode(text))` reproduces the normalized form of
/// `text` exactly whenever every normalized token is in the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

/// Lowercase and split into word/punctuation tokens. Hyphens and apostrophes
/// are word-internal so descriptors like "self-disciplined" stay one token.
pub fn normalize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        let ch = ch.to_ascii_lowercase();
        if ch.is_alphanumeric() || ch == '-' || ch == '\'' {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

impl Tokenizer {
    /// Build a vocabulary from a corpus. Words are added in first-seen order
    /// after the reserved specials, which keeps construction deterministic.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        vocab_budget: usize,
    ) -> Result<Self, ModelError> {
        let mut vocab: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        for text in texts {
            for tok in normalize(text) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), vocab.len() as u32);
                    vocab.push(tok);
                }
            }
        }
        if vocab.len() > vocab_budget {
            return Err(ModelError::VocabBudget {
                needed: vocab.len(),
                budget: vocab_budget,
            });
        }
        Ok(Self { vocab, index })
    }

    pub fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self { vocab, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(|s| s.as_str())
    }

    /// Out-of-vocabulary words map to `UNK`; no error.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        normalize(text)
            .iter()
            .map(|tok| self.index.get(tok).copied().unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self
                .vocab
                .get(id as usize)
                .map(|s| s.as_str())
                .unwrap_or("<unk>");
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    /// True when every normalized token of `text` is in the vocabulary.
    pub fn covers(&self, text: &str) -> bool {
        normalize(text).iter().all(|tok| self.index.contains_key(tok))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_splits_punctuation_keeps_hyphens() {
        let toks = normalize("Zoe Carter is self-disciplined, truly.");
        assert_eq!(
            toks,
            vec!["zoe", "carter", "is", "self-disciplined", ",", "truly", "."]
        );
    }

    #[test]
    fn encode_decode_identity_on_normalized_text() {
        let tk = Tokenizer::from_texts(["a quick brown fox, it jumps."], 64).unwrap();
        let text = "A quick brown fox, it jumps.";
        let ids = tk.encode(text);
        assert_eq!(tk.decode(&ids), normalize(text).join(" "));
        assert_eq!(tk.encode(&tk.decode(&ids)), ids);
    }

    #[test]
    fn ids_dense_and_reserved_first() {
        let tk = Tokenizer::from_texts(["b a"], 16).unwrap();
        assert_eq!(tk.token(PAD), Some("<pad>"));
        assert_eq!(tk.token(UNK), Some("<unk>"));
        assert_eq!(tk.token_id("b"), Some(4));
        assert_eq!(tk.token_id("a"), Some(5));
        assert_eq!(tk.vocab_size(), 6);
    }

    #[test]
    fn oov_becomes_unk() {
        let tk = Tokenizer::from_texts(["hello world"], 16).unwrap();
        assert_eq!(tk.encode("hello mars"), vec![4, UNK]);
    }

    #[test]
    fn budget_enforced() {
        let err = Tokenizer::from_texts(["one two three four five"], 6).unwrap_err();
        assert!(matches!(err, ModelError::VocabBudget { .. }));
    }
}
