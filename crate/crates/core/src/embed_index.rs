//! Exhaustive cosine-similarity index over attribute embeddings.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gateway::normalize;
use crate::persona::AttrId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero or non-finite vector")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityHit {
    pub id: AttrId,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    dim: Option<usize>,
    entries: BTreeMap<AttrId, Vec<f64>>,
}

impl EmbeddingIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: AttrId) -> Option<&[f64]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    fn check_dim(&self, got: usize) -> Result<(), IndexError> {
        match self.dim {
            Some(expected) if expected != got => Err(IndexError::DimensionMismatch { expected, got }),
            _ => Ok(()),
        }
    }

    /// Stores the normalized vector, replacing any previous entry for `id`.
    /// The first insert fixes the dimension.
    pub fn upsert(&mut self, id: AttrId, vector: Vec<f64>) -> Result<(), IndexError> {
        self.check_dim(vector.len())?;
        let unit = normalize(vector).ok_or(IndexError::Degenerate)?;
        self.dim.get_or_insert(unit.len());
        self.entries.insert(id, unit);
        Ok(())
    }

    pub fn remove(&mut self, id: AttrId) -> bool {
        self.entries.remove(&id).is_some()
    }

    /// Up to `m` hits by descending cosine, ties broken by ascending id.
    pub fn top_m(&self, query: &[f64], m: usize) -> Result<Vec<SimilarityHit>, IndexError> {
        if self.entries.is_empty() || m == 0 {
            return Ok(Vec::new());
        }
        self.check_dim(query.len())?;
        let query = normalize(query.to_vec()).ok_or(IndexError::Degenerate)?;
        let mut hits: Vec<SimilarityHit> = self
            .entries
            .iter()
            .map(|(id, v)| SimilarityHit {
                id: *id,
                score: dot(v, &query).clamp(-1.0, 1.0),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        hits.truncate(m);
        Ok(hits)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two arbitrary (non-zero) vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
