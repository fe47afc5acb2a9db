use rayon::prelude::*;

use super::model::{dot, EncoderModel};
use super::DenseError;
use crate::corpus::{self, ScoredCandidate};

/// One unit vector per candidate, row `i` for candidate id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn from_rows(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self, DenseError> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            if r.len() != dim {
                return Err(DenseError::InvalidConfig(format!(
                    "embedding of length {} in a {dim}-dimensional matrix",
                    r.len()
                )));
            }
            data.extend(r);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// Dot product of `query` with every row.
    pub fn scores(&self, query: &[f64]) -> Vec<f64> {
        self.data.par_chunks(self.dim).map(|r| dot(r, query)).collect()
    }
}

/// Token ids of one candidate's answer sentence and context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateTokens {
    pub answer: Vec<u32>,
    pub context: Vec<u32>,
}

/// Encodes every candidate; each row is independent of how the work is split.
pub fn embed_pool(
    model: &EncoderModel,
    candidates: &[CandidateTokens],
    use_context: bool,
) -> Result<EmbeddingMatrix, DenseError> {
    if candidates.is_empty() {
        return Err(DenseError::EmptyPool);
    }
    let rows = candidates
        .par_iter()
        .map(|c| model.encode_answer(&c.answer, &c.context, use_context))
        .collect::<Result<Vec<_>, _>>()?;
    EmbeddingMatrix::from_rows(model.config().d_out, rows)
}

/// Exhaustive maximum inner product; ties go to the lower id.
pub fn retrieve_topk(pool: &EmbeddingMatrix, query: &[f64], k: usize) -> Result<Vec<ScoredCandidate>, DenseError> {
    if pool.is_empty() {
        return Err(DenseError::EmptyPool);
    }
    if k == 0 {
        return Err(DenseError::ZeroK);
    }
    if query.len() != pool.dim() {
        return Err(DenseError::InvalidConfig(format!(
            "query has dimension {}, pool has {}",
            query.len(),
            pool.dim()
        )));
    }
    Ok(corpus::top_k(&pool.scores(query), k))
}
