//! Embedding vectors, cosine scoring and the provider abstraction.
//!
//! Vectors are stored as `f32`; every reduction (norms, dot products) runs
//! with `f64` accumulators.

mod http;
mod mock;
mod store;

use std::fmt;

use thiserror::Error;

pub use http::HttpEmbeddingProvider;
pub use mock::{mock_embed, token_bucket, tokenize, MockEmbeddingProvider};
pub use store::{load_store, read_store, save_store, write_store, EmbeddingStore, StoreError, MAX_DIM};

/// Tolerance used when checking the unit-norm precondition on inputs.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector contains a non-finite component at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector dimension must be positive")]
    EmptyVector,
    #[error("mock embedding dimension {0} is below the minimum of {min}", min = mock::MIN_MOCK_DIM)]
    DimensionTooSmall(usize),
}

/// Dense embedding vector.
#[derive(Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingVector(dim={}, ", self.0.len())?;
        f.debug_list().entries(self.0.iter().take(4)).finish()?;
        if self.0.len() > 4 {
            write!(f, "..")?;
        }
        write!(f, ")")
    }
}

impl EmbeddingVector {
    /// Wraps raw components, rejecting empty and non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    /// Builds a unit-norm vector from raw components.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        normalize(&Self::new(values)?)
    }

    pub(crate) fn from_raw_unchecked(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Euclidean norm computed in `f64`.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }
}

/// Returns `v / ||v||`.
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbeddingError> {
    normalize_f64(v.0.iter().map(|&x| f64::from(x)).collect())
}

/// Normalizes an `f64` accumulator into a unit-norm `f32` vector.
pub(crate) fn normalize_f64(values: Vec<f64>) -> Result<EmbeddingVector, EmbeddingError> {
    if values.is_empty() {
        return Err(EmbeddingError::EmptyVector);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite(i));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(EmbeddingVector(values.into_iter().map(|v| (v / norm) as f32).collect()))
}

/// Cosine similarity of two unit-norm vectors, i.e. their dot product.
///
/// Products are formed in `f64` and summed in index order, so the result is
/// exactly symmetric in its arguments.
pub fn cosine_similarity(t: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if t.dim() != v.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: t.dim(),
            actual: v.dim(),
        });
    }
    Ok(dot(&t.0, &v.0))
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("embedding provider: {0}")]
    Http(#[from] crate::http::HttpError),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider returned {actual} vectors for {expected} inputs")]
    CountMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Batch text and image encoder.
///
/// Implementations must return vectors in request order, each of
/// dimension [`EmbeddingProvider::dim`].
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_images(&self, ids: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let v = EmbeddingVector::new(vec![0.0, 3.0, 4.0]).unwrap();
        let n = normalize(&v).unwrap();
        assert_eq!(n.as_slice(), &[0.0, 0.6, 0.8]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let n = unit(&[0.0, 0.6, 0.8]);
        let again = normalize(&n).unwrap();
        for (a, b) in n.as_slice().iter().zip(again.as_slice()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn normalize_rejects_zero_and_nan() {
        let z = EmbeddingVector::new(vec![0.0; 4]).unwrap();
        assert_eq!(normalize(&z), Err(EmbeddingError::ZeroVector));
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f32::NAN]),
            Err(EmbeddingError::NonFinite(1))
        );
        assert_eq!(EmbeddingVector::new(vec![]), Err(EmbeddingError::EmptyVector));
    }

    /// Norm via pairwise summation of squares, independent of the
    /// sequential accumulator used by the implementation.
    fn pairwise_norm(v: &[f32]) -> f64 {
        fn sum(xs: &[f64]) -> f64 {
            match xs.len() {
                0 => 0.0,
                1 => xs[0],
                n => sum(&xs[..n / 2]) + sum(&xs[n / 2..]),
            }
        }
        let squares: Vec<f64> = v.iter().map(|&x| (x as f64) * (x as f64)).collect();
        sum(&squares).sqrt()
    }

    #[test]
    fn normalize_random_512_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let raw: Vec<f32> = (0..512).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let n = EmbeddingVector::normalized(raw).unwrap();
            assert!((pairwise_norm(n.as_slice()) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn cosine_examples() {
        let a = unit(&[0.6, 0.8]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        let x = unit(&[1.0, 0.0]);
        let y = unit(&[0.0, 1.0]);
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
        let b = unit(&[0.8, 0.6]);
        // 0.6*0.8 + 0.8*0.6
        assert!((cosine_similarity(&a, &b).unwrap() - 0.96).abs() < 1e-6);
    }

    #[test]
    fn cosine_dim_mismatch() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[1.0, 0.0, 0.0]);
        assert_eq!(
            cosine_similarity(&a, &b),
            Err(EmbeddingError::DimensionMismatch { expected: 2, actual: 3 })
        );
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f32..10.0, 16),
            b in proptest::collection::vec(-10.0f32..10.0, 16),
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let a = unit(&a);
            let b = unit(&b);
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab.abs() <= 1.0 + 1e-6);
        }
    }
}
