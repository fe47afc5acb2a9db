//! Okapi BM25 over the candidate pool.
//!
//! Each candidate becomes one document. With context enabled the document is
//! the sentence followed by its whole context, so the sentence text occurs
//! twice; two sentences from the same passage therefore never share a
//! document and never tie on score by construction.
//!
//! IDF uses the Robertson form `ln((N - n + 0.5) / (n + 0.5))`. Non-positive
//! values are replaced by `epsilon` times the mean of the positive values.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, Candidate, CandidateId, CandidatePool, ScoredCandidate};
use crate::tokenize::{Tokenizer, TokenizerSpec};

const FORMAT: &str = "reqa-bm25/1";

#[derive(Debug, Error)]
pub enum Bm25Error {
    #[error("cannot index an empty pool")]
    EmptyPool,
    #[error("unknown document {0}")]
    UnknownDocument(CandidateId),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file is corrupt or was produced by another format: {0}")]
    BadIndexFile(String),
    #[error("index was built with tokenizer {expected:?}, but {actual:?} was supplied")]
    TokenizerMismatch {
        expected: TokenizerSpec,
        actual: TokenizerSpec,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.5,
            b: 0.75,
            epsilon: 0.25,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), Bm25Error> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Bm25Error::InvalidParams(format!("k1 = {} must be > 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Bm25Error::InvalidParams(format!("b = {} must lie in [0, 1]", self.b)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Bm25Error::InvalidParams(format!(
                "epsilon = {} must be >= 0",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Inverted term statistics for one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    terms: Vec<String>,
    #[serde(skip)]
    term_ids: HashMap<String, u32>,
    /// Per term: `(document, term frequency)` in ascending document order.
    postings: Vec<Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    total_length: u64,
    tokenizer: TokenizerSpec,
    use_context: bool,
}

/// Tokens of the document built for `candidate`.
pub fn build_document(candidate: &Candidate, tokenizer: &Tokenizer, use_context: bool) -> Vec<String> {
    if use_context {
        tokenizer.tokens(&format!("{} {}", candidate.sentence, candidate.context))
    } else {
        tokenizer.tokens(&candidate.sentence)
    }
}

impl Bm25Index {
    /// Indexes pre-tokenized documents; document `i` gets id `i`.
    pub fn from_documents(
        documents: &[Vec<String>],
        tokenizer: TokenizerSpec,
        use_context: bool,
    ) -> Result<Self, Bm25Error> {
        if documents.is_empty() {
            return Err(Bm25Error::EmptyPool);
        }
        let mut term_ids: HashMap<String, u32> = HashMap::new();
        let mut terms = Vec::new();
        let mut postings: Vec<Vec<(u32, u32)>> = Vec::new();
        let mut doc_lengths = Vec::with_capacity(documents.len());
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for (doc, tokens) in documents.iter().enumerate() {
            counts.clear();
            for t in tokens {
                let id = *term_ids.entry(t.clone()).or_insert_with(|| {
                    terms.push(t.clone());
                    postings.push(Vec::new());
                    (terms.len() - 1) as u32
                });
                *counts.entry(id).or_insert(0) += 1;
            }
            let mut doc_terms: Vec<_> = counts.iter().map(|(&t, &c)| (t, c)).collect();
            doc_terms.sort_unstable();
            for (t, c) in doc_terms {
                postings[t as usize].push((doc as u32, c));
            }
            doc_lengths.push(tokens.len() as u32);
        }
        let total_length = doc_lengths.iter().map(|&l| l as u64).sum();
        Ok(Self {
            terms,
            term_ids,
            postings,
            doc_lengths,
            total_length,
            tokenizer,
            use_context,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.total_length as f64 / self.n_docs() as f64
    }

    pub fn doc_len(&self, doc: CandidateId) -> Option<u32> {
        self.doc_lengths.get(doc as usize).copied()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.term_ids.get(term).copied()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.term_id(term).map_or(0, |t| self.postings[t as usize].len())
    }

    pub fn term_freq(&self, term: &str, doc: CandidateId) -> u32 {
        self.term_id(term)
            .and_then(|t| {
                let p = &self.postings[t as usize];
                p.binary_search_by_key(&doc, |&(d, _)| d).ok().map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    pub fn tokenizer(&self) -> &TokenizerSpec {
        &self.tokenizer
    }

    pub fn use_context(&self) -> bool {
        self.use_context
    }

    fn rebuild_lookup(&mut self) {
        self.term_ids = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

/// Per-term IDF after flooring.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    values: Vec<f64>,
    floor: f64,
}

pub fn raw_idf(n_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (n_docs as f64, doc_freq as f64);
    ((n - df + 0.5) / (df + 0.5)).ln()
}

impl IdfTable {
    pub fn compute(index: &Bm25Index, params: &Bm25Params) -> Self {
        let n = index.n_docs();
        let raw: Vec<f64> = index.postings.iter().map(|p| raw_idf(n, p.len())).collect();
        let positive: Vec<f64> = raw.iter().copied().filter(|&v| v > 0.0).collect();
        let mean_positive = if positive.is_empty() {
            0.0
        } else {
            positive.iter().sum::<f64>() / positive.len() as f64
        };
        let floor = params.epsilon * mean_positive;
        let values = raw.into_iter().map(|v| if v > 0.0 { v } else { floor }).collect();
        Self { values, floor }
    }

    /// The value substituted for non-positive raw IDFs.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn get(&self, index: &Bm25Index, term: &str) -> Option<f64> {
        index.term_id(term).map(|t| self.values[t as usize])
    }
}

pub fn build_index(
    pool: &CandidatePool,
    tokenizer: &Tokenizer,
    params: &Bm25Params,
    use_context: bool,
) -> Result<(Bm25Index, IdfTable), Bm25Error> {
    params.validate()?;
    let docs: Vec<Vec<String>> = pool
        .candidates()
        .par_iter()
        .map(|c| build_document(c, tokenizer, use_context))
        .collect();
    let index = Bm25Index::from_documents(&docs, tokenizer.spec(), use_context)?;
    let idf = IdfTable::compute(&index, params);
    Ok((index, idf))
}

#[inline]
fn term_weight(idf: f64, tf: u32, doc_len: u32, avgdl: f64, p: &Bm25Params) -> f64 {
    let tf = tf as f64;
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len as f64 / avgdl))
}

/// BM25 score of one document. Every query-token occurrence contributes;
/// unseen terms contribute nothing.
pub fn score<S: AsRef<str>>(
    index: &Bm25Index,
    idf: &IdfTable,
    params: &Bm25Params,
    query: &[S],
    doc: CandidateId,
) -> Result<f64, Bm25Error> {
    let len = index.doc_len(doc).ok_or(Bm25Error::UnknownDocument(doc))?;
    let avgdl = index.avgdl();
    let mut total = 0.0;
    for q in query {
        let Some(t) = index.term_id(q.as_ref()) else {
            continue;
        };
        let tf = index.term_freq(q.as_ref(), doc);
        if tf > 0 {
            total += term_weight(idf.values[t as usize], tf, len, avgdl, params);
        }
    }
    Ok(total)
}

/// Scores of every document, accumulated through the postings lists.
pub fn score_all<S: AsRef<str>>(
    index: &Bm25Index,
    idf: &IdfTable,
    params: &Bm25Params,
    query: &[S],
) -> Vec<f64> {
    let avgdl = index.avgdl();
    let mut scores = vec![0.0; index.n_docs()];
    for q in query {
        let Some(t) = index.term_id(q.as_ref()) else {
            continue;
        };
        let w = idf.values[t as usize];
        for &(doc, tf) in &index.postings[t as usize] {
            scores[doc as usize] += term_weight(w, tf, index.doc_lengths[doc as usize], avgdl, params);
        }
    }
    scores
}

/// Exhaustive top-`k`; ties go to the lower id.
pub fn retrieve_topk<S: AsRef<str>>(
    index: &Bm25Index,
    idf: &IdfTable,
    params: &Bm25Params,
    query: &[S],
    k: usize,
) -> Result<Vec<ScoredCandidate>, Bm25Error> {
    if index.n_docs() == 0 {
        return Err(Bm25Error::EmptyPool);
    }
    if k == 0 {
        return Err(Bm25Error::ZeroK);
    }
    Ok(corpus::top_k(&score_all(index, idf, params, query), k))
}

/// Everything needed to answer queries: tokenizer, index, IDF and parameters.
#[derive(Debug, Clone)]
pub struct Bm25Retriever {
    pub tokenizer: Tokenizer,
    pub index: Bm25Index,
    pub idf: IdfTable,
    pub params: Bm25Params,
}

impl Bm25Retriever {
    pub fn build(
        pool: &CandidatePool,
        tokenizer: Tokenizer,
        params: Bm25Params,
        use_context: bool,
    ) -> Result<Self, Bm25Error> {
        let (index, idf) = build_index(pool, &tokenizer, &params, use_context)?;
        Ok(Self {
            tokenizer,
            index,
            idf,
            params,
        })
    }

    pub fn scores(&self, query: &str) -> Vec<f64> {
        score_all(&self.index, &self.idf, &self.params, &self.tokenizer.tokens(query))
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<ScoredCandidate>, Bm25Error> {
        retrieve_topk(&self.index, &self.idf, &self.params, &self.tokenizer.tokens(query), k)
    }

    /// Reattaches a tokenizer to a loaded index, checking it matches.
    pub fn from_saved(saved: SavedIndex, tokenizer: Tokenizer) -> Result<Self, Bm25Error> {
        if saved.index.tokenizer != tokenizer.spec() {
            return Err(Bm25Error::TokenizerMismatch {
                expected: saved.index.tokenizer.clone(),
                actual: tokenizer.spec(),
            });
        }
        let idf = IdfTable::compute(&saved.index, &saved.params);
        Ok(Self {
            tokenizer,
            index: saved.index,
            idf,
            params: saved.params,
        })
    }
}

/// On-disk index: params, tokenizer and a fingerprint over both.
#[derive(Debug, Serialize, Deserialize)]
pub struct SavedIndex {
    pub format: String,
    pub fingerprint: String,
    pub pool_fingerprint: String,
    pub params: Bm25Params,
    pub index: Bm25Index,
}

fn config_fingerprint(params: &Bm25Params, index: &Bm25Index, pool_fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(params).expect("params serialize"));
    h.update(serde_json::to_vec(&index.tokenizer).expect("spec serialize"));
    h.update([index.use_context as u8]);
    h.update(pool_fingerprint.as_bytes());
    hex::encode(h.finalize())
}

impl SavedIndex {
    pub fn new(retriever: &Bm25Retriever, pool_fingerprint: &str) -> Self {
        Self {
            format: FORMAT.to_string(),
            fingerprint: config_fingerprint(&retriever.params, &retriever.index, pool_fingerprint),
            pool_fingerprint: pool_fingerprint.to_string(),
            params: retriever.params,
            index: retriever.index.clone(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), Bm25Error> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, Bm25Error> {
        let mut saved: SavedIndex = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if saved.format != FORMAT {
            return Err(Bm25Error::BadIndexFile(format!("format {:?}", saved.format)));
        }
        saved.params.validate()?;
        if saved.fingerprint != config_fingerprint(&saved.params, &saved.index, &saved.pool_fingerprint) {
            return Err(Bm25Error::BadIndexFile("fingerprint mismatch".into()));
        }
        saved.index.rebuild_lookup();
        Ok(saved)
    }
}
