//! Shared data model: candidate pools, question sets and retrieval runs.
//!
//! Pools and question sets are frozen once built. Candidate ids are dense
//! `0..N` and double as indices into every per-candidate table (BM25
//! documents, embedding caches), so the whole crate shares one id space.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type CandidateId = u32;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate candidate (doc_id={doc_id}, sentence_index={sentence_index})")]
    DuplicateCandidate { doc_id: String, sentence_index: u32 },
    #[error("unknown candidate id {0}")]
    UnknownCandidateId(CandidateId),
    #[error("invalid candidate {id}: {reason}")]
    InvalidCandidate { id: CandidateId, reason: String },
    #[error("invalid question {qid}: {reason}")]
    InvalidQuestion { qid: String, reason: String },
    #[error("duplicate question id {0}")]
    DuplicateQuestion(String),
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A candidate record before id assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCandidate {
    pub doc_id: String,
    pub sentence_index: u32,
    pub sentence: String,
    pub context: String,
    pub title: Option<String>,
}

/// One retrievable sentence together with the passage it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub doc_id: String,
    pub sentence_index: u32,
    pub sentence: String,
    pub context: String,
    #[serde(default)]
    pub title: Option<String>,
}

impl Candidate {
    fn check(&self) -> Result<()> {
        let fail = |reason: &str| CorpusError::InvalidCandidate {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.sentence.trim().is_empty() {
            return Err(fail("sentence is empty"));
        }
        if !self.context.contains(self.sentence.as_str()) {
            return Err(fail("sentence is not a substring of its context"));
        }
        Ok(())
    }
}

/// Immutable retrieval corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidatePool {
    candidates: Vec<Candidate>,
}

impl CandidatePool {
    /// Assigns ids `0..N` in input order.
    pub fn assign_ids(records: impl IntoIterator<Item = RawCandidate>) -> Result<Self> {
        let candidates = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| Candidate {
                id: i as CandidateId,
                doc_id: r.doc_id,
                sentence_index: r.sentence_index,
                sentence: r.sentence,
                context: r.context,
                title: r.title,
            })
            .collect();
        Self::from_candidates(candidates)
    }

    /// Builds a pool from already-numbered candidates, checking every invariant.
    pub fn from_candidates(candidates: Vec<Candidate>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            if c.id as usize != i {
                return Err(CorpusError::InvalidCandidate {
                    id: c.id,
                    reason: format!("expected dense id {i}"),
                });
            }
            c.check()?;
            if !seen.insert((c.doc_id.as_str(), c.sentence_index)) {
                return Err(CorpusError::DuplicateCandidate {
                    doc_id: c.doc_id.clone(),
                    sentence_index: c.sentence_index,
                });
            }
        }
        Ok(Self { candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, id: CandidateId) -> Option<&Candidate> {
        self.candidates.get(id as usize)
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Candidate> {
        self.candidates.iter()
    }

    pub fn contains(&self, id: CandidateId) -> bool {
        (id as usize) < self.candidates.len()
    }

    /// Returns the gold candidates of `question`, in id order.
    pub fn gold_lookup(&self, question: &Question) -> Result<Vec<&Candidate>> {
        question
            .gold
            .iter()
            .map(|&id| self.get(id).ok_or(CorpusError::UnknownCandidateId(id)))
            .collect()
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        Self::from_candidates(read_jsonl_lines(reader)?)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.candidates {
            write_json_line(&mut w, c)?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a CandidatePool {
    type Item = &'a Candidate;
    type IntoIter = std::slice::Iter<'a, Candidate>;

    fn into_iter(self) -> Self::IntoIter {
        self.candidates.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub qid: String,
    #[serde(rename = "question")]
    pub text: String,
    pub gold: BTreeSet<CandidateId>,
}

impl Question {
    pub fn is_gold(&self, id: CandidateId) -> bool {
        self.gold.contains(&id)
    }
}

/// Questions with non-empty gold sets and unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuestionSet {
    questions: Vec<Question>,
    index: HashMap<String, usize>,
}

impl QuestionSet {
    /// Validates gold ids against `pool`.
    pub fn new(questions: Vec<Question>, pool: &CandidatePool) -> Result<Self> {
        Self::build(questions, Some(pool))
    }

    /// Validates structure only; gold ids are not checked against a pool.
    pub fn standalone(questions: Vec<Question>) -> Result<Self> {
        Self::build(questions, None)
    }

    fn build(questions: Vec<Question>, pool: Option<&CandidatePool>) -> Result<Self> {
        let mut index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if q.gold.is_empty() {
                return Err(CorpusError::InvalidQuestion {
                    qid: q.qid.clone(),
                    reason: "empty gold set".into(),
                });
            }
            if let Some(pool) = pool {
                if let Some(&bad) = q.gold.iter().find(|&&id| !pool.contains(id)) {
                    return Err(CorpusError::UnknownCandidateId(bad));
                }
            }
            if index.insert(q.qid.clone(), i).is_some() {
                return Err(CorpusError::DuplicateQuestion(q.qid.clone()));
            }
        }
        Ok(Self { questions, index })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Question> {
        self.questions.iter()
    }

    pub fn get(&self, qid: &str) -> Option<&Question> {
        self.index.get(qid).map(|&i| &self.questions[i])
    }

    pub fn read_jsonl<R: BufRead>(reader: R, pool: &CandidatePool) -> Result<Self> {
        Self::new(read_jsonl_lines(reader)?, pool)
    }

    pub fn read_jsonl_standalone<R: BufRead>(reader: R) -> Result<Self> {
        Self::standalone(read_jsonl_lines(reader)?)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for q in &self.questions {
            write_json_line(&mut w, q)?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a QuestionSet {
    type Item = &'a Question;
    type IntoIter = std::slice::Iter<'a, Question>;

    fn into_iter(self) -> Self::IntoIter {
        self.questions.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: CandidateId,
    pub score: f64,
}

/// Descending score, ascending id on ties.
pub fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Top-`k` of a dense score vector indexed by candidate id.
pub fn top_k(scores: &[f64], k: usize) -> Vec<ScoredCandidate> {
    let mut all: Vec<ScoredCandidate> = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| ScoredCandidate {
            id: i as CandidateId,
            score,
        })
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank_order);
        all.truncate(k);
    }
    all.sort_unstable_by(rank_order);
    all
}

/// 1-based rank of `id` in the full ranking implied by `scores`.
pub fn rank_in_full(scores: &[f64], id: CandidateId) -> u32 {
    let target = ScoredCandidate {
        id,
        score: scores[id as usize],
    };
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| {
            rank_order(
                &ScoredCandidate {
                    id: i as CandidateId,
                    score: s,
                },
                &target,
            ) == Ordering::Less
        })
        .count();
    ahead as u32 + 1
}

/// Ranked candidates for one question.
///
/// `gold_ranks`, when present, holds the 1-based ranks of every gold
/// candidate in the full ranking; `ranked` may then be truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub qid: String,
    pub ranked: Vec<ScoredCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_ranks: Option<Vec<u32>>,
}

impl RankedList {
    pub fn top1(&self) -> Option<CandidateId> {
        self.ranked.first().map(|s| s.id)
    }

    fn check(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.ranked.len());
        for w in self.ranked.windows(2) {
            if rank_order(&w[0], &w[1]) != Ordering::Less {
                return Err(CorpusError::InvalidRun(format!(
                    "question {}: ranking is not sorted by (score desc, id asc)",
                    self.qid
                )));
            }
        }
        for s in &self.ranked {
            if !ids.insert(s.id) {
                return Err(CorpusError::InvalidRun(format!(
                    "question {}: candidate {} appears twice",
                    self.qid, s.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunHeader {
    system_name: String,
}

/// Per-question ranked lists produced by one system.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    pub system_name: String,
    entries: Vec<RankedList>,
    index: HashMap<String, usize>,
}

impl RetrievalRun {
    pub fn new(system_name: impl Into<String>, entries: Vec<RankedList>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            e.check()?;
            if index.insert(e.qid.clone(), i).is_some() {
                return Err(CorpusError::InvalidRun(format!(
                    "question {} appears twice",
                    e.qid
                )));
            }
        }
        Ok(Self {
            system_name: system_name.into(),
            entries,
            index,
        })
    }

    pub fn entries(&self) -> &[RankedList] {
        &self.entries
    }

    pub fn get(&self, qid: &str) -> Option<&RankedList> {
        self.index.get(qid).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First line is a `{"system_name": ...}` header, then one ranked list per line.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: RunHeader = loop {
            match lines.next() {
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line)
                        .map_err(|source| CorpusError::Json { line: i + 1, source })?;
                }
                None => return Err(CorpusError::InvalidRun("missing header line".into())),
            }
        };
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|source| CorpusError::Json { line: i + 1, source })?,
            );
        }
        Self::new(header.system_name, entries)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        write_json_line(
            &mut w,
            &RunHeader {
                system_name: self.system_name.clone(),
            },
        )?;
        for e in &self.entries {
            write_json_line(&mut w, e)?;
        }
        Ok(())
    }
}

fn read_jsonl_lines<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?,
        );
    }
    Ok(out)
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| CorpusError::Io(e.into()))?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(doc: &str, idx: u32, sentence: &str) -> RawCandidate {
        RawCandidate {
            doc_id: doc.into(),
            sentence_index: idx,
            sentence: sentence.into(),
            context: format!("{sentence} More text."),
            title: None,
        }
    }

    fn ten_pool() -> CandidatePool {
        CandidatePool::assign_ids((0..10).map(|i| raw("d", i, &format!("Sentence {i}.")))).unwrap()
    }

    #[test]
    fn assigns_ids_in_input_order() {
        let pool =
            CandidatePool::assign_ids(vec![raw("a", 0, "x."), raw("a", 1, "y."), raw("b", 0, "z.")])
                .unwrap();
        let ids: Vec<_> = pool.iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(pool.get(2).unwrap().sentence, "z.");
    }

    #[test]
    fn empty_input_gives_empty_pool() {
        let pool = CandidatePool::assign_ids(Vec::new()).unwrap();
        assert!(pool.is_empty());
    }

    #[test]
    fn duplicate_doc_sentence_is_rejected() {
        let err = CandidatePool::assign_ids(vec![raw("a", 0, "x."), raw("a", 0, "y.")]).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::DuplicateCandidate { ref doc_id, sentence_index: 0 } if doc_id == "a"
        ));
    }

    #[test]
    fn identical_sentences_in_different_docs_stay_distinct() {
        let pool = CandidatePool::assign_ids(vec![raw("a", 0, "x."), raw("b", 0, "x.")]).unwrap();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn sentence_must_come_from_context() {
        let mut r = raw("a", 0, "x.");
        r.context = "nothing here".into();
        assert!(matches!(
            CandidatePool::assign_ids(vec![r]),
            Err(CorpusError::InvalidCandidate { .. })
        ));
    }

    #[test]
    fn gold_lookup_single_and_multi() {
        let pool = ten_pool();
        let q = Question {
            qid: "q".into(),
            text: "?".into(),
            gold: [4].into(),
        };
        let got = pool.gold_lookup(&q).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, 4);

        let q2 = Question {
            gold: [1, 7].into(),
            ..q.clone()
        };
        assert_eq!(pool.gold_lookup(&q2).unwrap().len(), 2);

        let q3 = Question { gold: [99].into(), ..q };
        assert!(matches!(
            pool.gold_lookup(&q3),
            Err(CorpusError::UnknownCandidateId(99))
        ));
    }

    #[test]
    fn question_set_rejects_empty_gold_and_unknown_ids() {
        let pool = ten_pool();
        let empty = Question {
            qid: "a".into(),
            text: "?".into(),
            gold: BTreeSet::new(),
        };
        assert!(QuestionSet::new(vec![empty], &pool).is_err());
        let unknown = Question {
            qid: "a".into(),
            text: "?".into(),
            gold: [10].into(),
        };
        assert!(matches!(
            QuestionSet::new(vec![unknown], &pool),
            Err(CorpusError::UnknownCandidateId(10))
        ));
    }

    #[test]
    fn top_k_breaks_ties_by_id() {
        let got = top_k(&[0.0, 1.0, 0.0, 1.0, 0.5], 4);
        let ids: Vec<_> = got.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![1, 3, 4, 0]);
        assert_eq!(rank_in_full(&[0.0, 1.0, 0.0, 1.0, 0.5], 2), 5);
    }

    #[test]
    fn run_rejects_unsorted_lists() {
        let bad = RankedList {
            qid: "q".into(),
            ranked: vec![
                ScoredCandidate { id: 1, score: 0.1 },
                ScoredCandidate { id: 0, score: 0.2 },
            ],
            gold_ranks: None,
        };
        assert!(RetrievalRun::new("x", vec![bad]).is_err());
    }

    fn arb_pool() -> impl Strategy<Value = Vec<RawCandidate>> {
        prop::collection::vec(("[a-c]{1,2}", "[a-z ]{0,6}[a-z]\\.", prop::option::of("[A-Z][a-z]{0,4}")), 0..20)
            .prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (doc, sentence, title))| RawCandidate {
                        doc_id: doc,
                        sentence_index: i as u32,
                        context: format!("Before. {sentence} After \"quoted\" é."),
                        sentence,
                        title,
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn ids_are_a_bijection(rows in arb_pool()) {
            let n = rows.len();
            let pool = CandidatePool::assign_ids(rows.clone()).unwrap();
            prop_assert_eq!(pool.len(), n);
            for (i, (c, r)) in pool.iter().zip(&rows).enumerate() {
                prop_assert_eq!(c.id as usize, i);
                prop_assert_eq!(&c.sentence, &r.sentence);
            }
        }

        #[test]
        fn pool_round_trips_through_jsonl(rows in arb_pool()) {
            let pool = CandidatePool::assign_ids(rows).unwrap();
            let mut buf = Vec::new();
            pool.write_jsonl(&mut buf).unwrap();
            let back = CandidatePool::read_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back, pool);
        }
    }
}
