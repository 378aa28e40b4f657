use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::scalar::Scalar;

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// Scales `values` to unit Euclidean norm.
    pub fn normalized(values: Vec<T>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let norm = values.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !norm.is_finite() || norm <= T::zero() {
            return Err(BackendError::Contract {
                backend: "embedding".into(),
                detail: "zero or non-finite embedding".into(),
            });
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut values = vec![T::zero(); dim];
        values[axis] = T::one();
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Cosine of the angle between two embeddings, clamped into `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T, BackendError> {
    if a.dim() != b.dim() {
        return Err(BackendError::DimMismatch(a.dim(), b.dim()));
    }
    let dot: T = a.values.iter().zip(&b.values).map(|(&x, &y)| x * y).sum();
    let cos = dot / (a.norm() * b.norm());
    Ok(cos.max(-T::one()).min(T::one()))
}
