//! Text normalization, vocabulary and token encoding.
//!
//! Tokenization is whitespace splitting over normalized text. Ids 0 and 1 are
//! reserved for padding and out-of-vocabulary tokens.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 64;

/// Lowercase, NFC, non-alphanumerics to spaces, collapsed and trimmed whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().flat_map(char::to_lowercase).nfc() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Normalized whitespace tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Immutable token <-> id mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list, which must start
    /// with the two reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::InvalidConfig(
                "vocabulary must start with the <pad> and <unk> tokens".into(),
            ));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId(t.clone()));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Never true: the reserved tokens are always present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokens in id order, reserved tokens first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Every normalized token with frequency `>= min_freq`, ordered by descending
/// frequency then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Vocab {
    let min_freq = min_freq.max(1);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for sentence in corpus {
        for tok in normalize(sentence.as_ref())
            .split(' ')
            .filter(|t| !t.is_empty())
        {
            *counts.entry(tok.to_string()).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    // BTreeMap iteration is lexicographic, so a stable sort by count keeps ties ordered.
    kept.sort_by_key(|k| core::cmp::Reverse(k.1));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocab::from_tokens(tokens).expect("normalized tokens cannot collide with reserved tokens")
}

/// Token ids of one sentence. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// Token count before truncation.
    pub original_length: usize,
}

pub fn encode_tokens(vocab: &Vocab, text: &str, max_len: usize) -> TokenSeq {
    let max_len = max_len.max(1);
    let norm = normalize(text);
    let mut ids = Vec::new();
    let mut original_length = 0;
    for tok in norm.split(' ').filter(|t| !t.is_empty()) {
        original_length += 1;
        if ids.len() < max_len {
            ids.push(vocab.id(tok).unwrap_or(UNK_ID));
        }
    }
    if ids.is_empty() {
        ids.push(UNK_ID);
    }
    TokenSeq {
        ids,
        original_length,
    }
}
