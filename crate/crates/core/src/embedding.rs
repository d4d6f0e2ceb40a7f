//! Text encoding and similarity.
//!
//! The default encoder is signed feature hashing: every token is hashed with
//! 64-bit FNV-1a, the hash picks one of `D` buckets and the top bit picks the
//! sign. The accumulated vector is then L2-normalized, so cosine similarity
//! between two embeddings reduces to a dot product.

use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default embedding dimensionality.
pub const DEFAULT_DIMENSION: usize = 256;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding dimension must be positive")]
    ZeroDimension,
}

/// A fixed-dimension vector that is either all zeros or unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    /// Scale `values` to unit length. An all-zero input stays all-zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Self(values)
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// True when the vector satisfies the zero-or-unit invariant.
    pub fn is_valid(&self) -> bool {
        self.is_zero() || (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Lowercased maximal runs of Unicode alphanumeric characters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl IntoIterator for TokenList {
    type Item = String;
    type IntoIter = std::vec::IntoIter<String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

pub fn tokenize(text: &str) -> TokenList {
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|run| !run.is_empty())
        .map(str::to_lowercase)
        .collect();
    TokenList(tokens)
}

/// Cosine similarity of two embeddings. Both are already normalized, so this
/// is their dot product; anything against a zero vector scores 0.0.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Maps text to an [`Embedding`] of a fixed dimension, deterministically.
///
/// Implementations must return the same vector for the same text on every
/// call; route tables and guard tables are built once and compared against
/// per-request encodings.
pub trait Encoder: Send + Sync + std::fmt::Debug {
    fn dimension(&self) -> usize;

    fn encode(&self, text: &str) -> Embedding;

    /// Encode several texts at once. The result for each text must equal
    /// what [`Encoder::encode`] would return for it alone.
    fn encode_batch(&self, texts: &[&str]) -> Vec<Embedding> {
        texts.iter().map(|t| self.encode(t)).collect()
    }
}

pub type SharedEncoder = Arc<dyn Encoder>;

/// Signed feature-hashing encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEncoder {
    dimension: usize,
}

impl HashingEncoder {
    pub fn new(dimension: usize) -> Result<Self, EmbeddingError> {
        if dimension == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        Ok(Self { dimension })
    }

    fn accumulate(&self, token: &str, into: &mut [f64]) {
        let mut hasher = FnvHasher::default();
        hasher.write(token.as_bytes());
        let hash = hasher.finish();
        let bucket = (hash % self.dimension as u64) as usize;
        if hash >> 63 == 0 {
            into[bucket] += 1.0;
        } else {
            into[bucket] -= 1.0;
        }
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl Encoder for HashingEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Embedding {
        let mut values = vec![0.0; self.dimension];
        for token in tokenize(text).iter() {
            self.accumulate(token, &mut values);
        }
        Embedding::normalized(values)
    }
}

/// Encode `text` with the default hashing encoder.
pub fn embed(text: &str) -> Embedding {
    HashingEncoder::default().encode(text)
}
