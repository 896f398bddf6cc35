//! Unit-norm embedding vectors.

use thiserror::Error;

use crate::scalar::{dot, norm, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding dimension {0} is below 2")]
    TooSmall(usize),
    #[error("embedding norm {0} is not 1")]
    NotUnitNorm(f64),
    #[error("cannot normalize a zero or non-finite vector")]
    Degenerate,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
}

/// L2-normalized vector of dimension ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S: Scalar = f64> {
    values: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    /// Wraps `values`, which must already have unit norm.
    pub fn new(values: Vec<S>) -> Result<Self, EmbeddingError> {
        if values.len() < 2 {
            return Err(EmbeddingError::TooSmall(values.len()));
        }
        let n = norm(&values).as_f64();
        if !n.is_finite() || (n - 1.0).abs() > S::UNIT_NORM_TOL {
            return Err(EmbeddingError::NotUnitNorm(n));
        }
        Ok(Self { values })
    }

    /// Scales `values` to unit norm.
    pub fn normalized(mut values: Vec<S>) -> Result<Self, EmbeddingError> {
        if values.len() < 2 {
            return Err(EmbeddingError::TooSmall(values.len()));
        }
        let n = norm(&values);
        if !n.is_finite() || n.as_f64() <= 1e-12 {
            return Err(EmbeddingError::Degenerate);
        }
        values.iter_mut().for_each(|v| *v = *v / n);
        Ok(Self { values })
    }

    /// Wraps a vector without the norm check. Used where a loss is
    /// evaluated off the unit sphere (finite differences, free-vector
    /// gradients).
    pub fn unchecked(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn dot(&self, other: &Self) -> S {
        dot(&self.values, &other.values)
    }
}
