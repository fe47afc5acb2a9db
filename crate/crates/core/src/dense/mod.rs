//! Dual-encoder retrieval: model, training, pool search and persistence.

mod model;
mod search;
mod store;
mod train;

use thiserror::Error;

use crate::converter::TrainingPair;
use crate::corpus::{CandidatePool, ScoredCandidate};
use crate::tokenize::Tokenizer;

pub use model::{dot, softmax_loss, EncoderModel, LossOutput, ModelConfig, Segment, TrainingBatch};
pub use search::{embed_pool, retrieve_topk, CandidateTokens, EmbeddingMatrix};
pub use store::{read_embeddings, write_embeddings, Checkpoint, EmbeddingHeader, SegmentShape};
pub use train::{split_validation, train, EncodedPair, Optimizer, Preset, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("empty token sequence")]
    EmptyInput,
    #[error("token id {0} is outside the vocabulary")]
    InvalidTokenId(u32),
    #[error("embedding is the zero vector and cannot be normalized")]
    NormalizationDegenerate,
    #[error("batch of {0} has no negatives; at least 2 pairs are required")]
    BatchTooSmall(usize),
    #[error("{have} training pairs, but the batch size is {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("cannot search an empty pool")]
    EmptyPool,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad model or embedding file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn ids(tokenizer: &Tokenizer, text: &str) -> Result<Vec<u32>, DenseError> {
    tokenizer.ids(text).ok_or_else(|| {
        DenseError::InvalidConfig("the dense model needs a vocabulary-backed (wpm) tokenizer".into())
    })
}

pub fn pool_tokens(pool: &CandidatePool, tokenizer: &Tokenizer) -> Result<Vec<CandidateTokens>, DenseError> {
    pool.iter()
        .map(|c| {
            Ok(CandidateTokens {
                answer: ids(tokenizer, &c.sentence)?,
                context: ids(tokenizer, &c.context)?,
            })
        })
        .collect()
}

pub fn encode_pairs(pairs: &[TrainingPair], tokenizer: &Tokenizer) -> Result<Vec<EncodedPair>, DenseError> {
    pairs
        .iter()
        .map(|p| {
            Ok(EncodedPair {
                question: ids(tokenizer, &p.question)?,
                answer: ids(tokenizer, &p.answer)?,
                context: ids(tokenizer, &p.context)?,
            })
        })
        .collect()
}

/// A model with its tokenizer and the encoded candidate pool.
#[derive(Debug, Clone)]
pub struct DenseRetriever {
    pub model: EncoderModel,
    pub tokenizer: Tokenizer,
    pub pool: EmbeddingMatrix,
}

impl DenseRetriever {
    pub fn build(
        model: EncoderModel,
        tokenizer: Tokenizer,
        pool: &CandidatePool,
        use_context: bool,
    ) -> Result<Self, DenseError> {
        let tokens = pool_tokens(pool, &tokenizer)?;
        let pool = embed_pool(&model, &tokens, use_context)?;
        Ok(Self { model, tokenizer, pool })
    }

    pub fn query(&self, question: &str) -> Result<Vec<f64>, DenseError> {
        self.model.encode_question(&ids(&self.tokenizer, question)?)
    }

    pub fn scores(&self, question: &str) -> Result<Vec<f64>, DenseError> {
        Ok(self.pool.scores(&self.query(question)?))
    }

    pub fn retrieve(&self, question: &str, k: usize) -> Result<Vec<ScoredCandidate>, DenseError> {
        retrieve_topk(&self.pool, &self.query(question)?, k)
    }
}
