use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ConvertError;
use crate::corpus::{CandidatePool, QuestionSet};
use crate::tokenize::Tokenizer;

pub const OVERLAP_DEFINITION: &str =
    "overlap(q, a) = |uniq(q) ∩ uniq(a)| / |uniq(q)| × 100, averaged over (question, gold answer) pairs";

/// Dataset statistics. Answer and context figures are averaged over
/// (question, gold answer) pairs; question length over questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub overlap_definition: String,
    pub tokenizer: String,
    pub n_train_pairs: usize,
    pub n_questions: usize,
    pub n_candidates: usize,
    pub avg_answers_per_question: f64,
    pub avg_question_tokens: f64,
    pub avg_answer_tokens: f64,
    pub avg_context_tokens: f64,
    pub question_answer_overlap: f64,
    pub question_context_overlap: f64,
}

fn overlap_percent(question: &HashSet<String>, other: &[String]) -> f64 {
    if question.is_empty() {
        return 0.0;
    }
    let other: HashSet<&str> = other.iter().map(String::as_str).collect();
    let shared = question.iter().filter(|t| other.contains(t.as_str())).count();
    100.0 * shared as f64 / question.len() as f64
}

pub fn compute_stats(
    pool: &CandidatePool,
    questions: &QuestionSet,
    tokenizer: &Tokenizer,
) -> Result<CorpusStats, ConvertError> {
    if questions.is_empty() || pool.is_empty() {
        return Err(ConvertError::EmptyDataset);
    }
    let mut pairs = 0usize;
    let mut q_tokens = 0usize;
    let (mut a_tokens, mut c_tokens) = (0usize, 0usize);
    let (mut qa_overlap, mut qc_overlap) = (0.0, 0.0);
    for q in questions {
        let qt = tokenizer.tokens(&q.text);
        q_tokens += qt.len();
        let q_uniq: HashSet<String> = qt.into_iter().collect();
        for c in pool.gold_lookup(q)? {
            let at = tokenizer.tokens(&c.sentence);
            let ct = tokenizer.tokens(&c.context);
            pairs += 1;
            a_tokens += at.len();
            c_tokens += ct.len();
            qa_overlap += overlap_percent(&q_uniq, &at);
            qc_overlap += overlap_percent(&q_uniq, &ct);
        }
    }
    let nq = questions.len() as f64;
    let np = pairs as f64;
    Ok(CorpusStats {
        overlap_definition: OVERLAP_DEFINITION.to_string(),
        tokenizer: tokenizer.regime().to_string(),
        n_train_pairs: pairs,
        n_questions: questions.len(),
        n_candidates: pool.len(),
        avg_answers_per_question: np / nq,
        avg_question_tokens: q_tokens as f64 / nq,
        avg_answer_tokens: a_tokens as f64 / np,
        avg_context_tokens: c_tokens as f64 / np,
        question_answer_overlap: qa_overlap / np,
        question_context_overlap: qc_overlap / np,
    })
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.overlap_definition);
        let _ = writeln!(s, "# tokenizer: {}", self.tokenizer);
        let rows = [
            ("pairs", self.n_train_pairs.to_string()),
            ("questions", self.n_questions.to_string()),
            ("candidates", self.n_candidates.to_string()),
            ("avg answers / question", format!("{:.2}", self.avg_answers_per_question)),
            ("avg question tokens", format!("{:.2}", self.avg_question_tokens)),
            ("avg answer tokens", format!("{:.2}", self.avg_answer_tokens)),
            ("avg context tokens", format!("{:.2}", self.avg_context_tokens)),
            ("question/answer overlap %", format!("{:.2}", self.question_answer_overlap)),
            ("question/context overlap %", format!("{:.2}", self.question_context_overlap)),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<28}{v:>12}");
        }
        s
    }
}
