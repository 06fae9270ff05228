//! Word tokenization and feature hashing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextConfig {
    pub vocab_buckets: usize,
    pub lowercase: bool,
    pub hash_seed: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            vocab_buckets: 1 << 15,
            lowercase: true,
            hash_seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TextError {
    #[error("mask has {mask} entries but the sequence has {tokens} tokens")]
    MaskLength { mask: usize, tokens: usize },
    #[error("vocab_buckets must be at least 2, got {0}")]
    TooFewBuckets(usize),
}

impl TextConfig {
    pub fn validate(&self) -> Result<(), TextError> {
        if self.vocab_buckets < 2 {
            return Err(TextError::TooFewBuckets(self.vocab_buckets));
        }
        Ok(())
    }

    /// Stable bucket of an already-normalized surface form.
    pub fn slot(&self, surface: &str) -> usize {
        let h = xxhash_rust::xxh64::xxh64(surface.as_bytes(), self.hash_seed);
        (h % self.vocab_buckets as u64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub slot: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens.iter().map(|t| t.slot)
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> + '_ {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

/// Splits on Unicode whitespace and trims non-alphanumeric characters from
/// both ends of every word. Words that trim to nothing are dropped.
pub fn tokenize(text: &str, config: &TextConfig) -> TokenSeq {
    let tokens = text
        .split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return None;
            }
            let surface = if config.lowercase {
                trimmed.to_lowercase()
            } else {
                trimmed.to_string()
            };
            let slot = config.slot(&surface);
            Some(Token { surface, slot })
        })
        .collect();
    TokenSeq { tokens }
}

/// Keeps token `i` iff `mask[i]`.
pub fn mask_tokens(seq: &TokenSeq, mask: &[bool]) -> Result<TokenSeq, TextError> {
    if mask.len() != seq.len() {
        return Err(TextError::MaskLength {
            mask: mask.len(),
            tokens: seq.len(),
        });
    }
    Ok(TokenSeq {
        tokens: seq
            .tokens
            .iter()
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|(t, _)| t.clone())
            .collect(),
    })
}
