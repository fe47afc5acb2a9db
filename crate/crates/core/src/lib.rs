//! Sentence-level answer retrieval: corpus conversion, lexical and dense
//! retrievers, and evaluation.

pub mod bm25;
pub mod converter;
pub mod corpus;
pub mod segmenter;
pub mod tokenize;
pub mod eval;
pub mod dense;
pub mod retrieve;
pub mod manifest;
pub mod config;
pub mod cli;
