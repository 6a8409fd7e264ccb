//! Hermetic hashing embedder used by tests and synthetic fixtures.

use std::collections::HashMap;

use super::{normalize_f64, EmbeddingError, EmbeddingProvider, EmbeddingVector, ProviderError};

pub const MIN_MOCK_DIM: usize = 8;

const EMPTY_SENTINEL: &str = "\u{0}empty";

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Coordinate a token is hashed to by [`mock_embed`] at dimension `dim`.
pub fn token_bucket(token: &str, dim: usize) -> usize {
    (fnv1a(token.as_bytes()) % dim as u64) as usize
}

fn accumulate<'a>(tokens: impl Iterator<Item = &'a str>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; dim];
    for token in tokens {
        let h = fnv1a(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[token_bucket(token, dim)] += sign;
    }
    acc
}

/// Deterministic bag-of-tokens embedding.
///
/// Each token is hashed to one signed coordinate; repeated tokens add up, so
/// repetition acts as a weight. The result is L2-normalized. Empty input (or
/// input whose buckets cancel exactly) embeds as a reserved sentinel token.
pub fn mock_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < MIN_MOCK_DIM {
        return Err(EmbeddingError::DimensionTooSmall(dim));
    }
    let tokens = tokenize(text);
    let acc = accumulate(tokens.iter().map(String::as_str), dim);
    match normalize_f64(acc) {
        Err(EmbeddingError::ZeroVector) => normalize_f64(accumulate(std::iter::once(EMPTY_SENTINEL), dim)),
        other => other,
    }
}

/// Provider backed by [`mock_embed`].
///
/// Images are embedded through an optional caption table; ids without a
/// caption are embedded from the id string itself.
#[derive(Debug, Clone)]
pub struct MockEmbeddingProvider {
    dim: usize,
    captions: HashMap<String, String>,
}

impl MockEmbeddingProvider {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim < MIN_MOCK_DIM {
            return Err(EmbeddingError::DimensionTooSmall(dim));
        }
        Ok(Self {
            dim,
            captions: HashMap::new(),
        })
    }

    pub fn with_captions(mut self, captions: HashMap<String, String>) -> Self {
        self.captions = captions;
        self
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| mock_embed(t, self.dim).map_err(ProviderError::from))
            .collect()
    }

    fn embed_images(&self, ids: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        ids.iter()
            .map(|id| {
                let text = self.captions.get(id).map_or(id.as_str(), String::as_str);
                mock_embed(text, self.dim).map_err(ProviderError::from)
            })
            .collect()
    }
}
