//! Turns per-question score vectors into a [`RetrievalRun`].

use rayon::prelude::*;

use crate::corpus::{self, CorpusError, Question, QuestionSet, RankedList, RetrievalRun};

/// How much of each ranking to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunShape {
    /// Entries kept in `ranked`; `None` keeps the full ranking.
    pub k: Option<usize>,
    /// Also store the full-ranking rank of every gold candidate.
    pub gold_ranks: bool,
}

impl RunShape {
    pub const FULL: RunShape = RunShape {
        k: None,
        gold_ranks: false,
    };
}

/// Scores every question with `score` (one value per candidate id) and
/// ranks the pool. Questions are processed in parallel; output order follows
/// the question set.
pub fn build_run<E, F>(
    system_name: &str,
    questions: &QuestionSet,
    shape: RunShape,
    score: F,
) -> Result<RetrievalRun, E>
where
    E: From<CorpusError> + Send,
    F: Fn(&Question) -> Result<Vec<f64>, E> + Sync,
{
    let entries = questions
        .questions()
        .par_iter()
        .map(|q| {
            let scores = score(q)?;
            let k = shape.k.unwrap_or(scores.len());
            let gold_ranks = shape
                .gold_ranks
                .then(|| q.gold.iter().map(|&g| corpus::rank_in_full(&scores, g)).collect());
            Ok(RankedList {
                qid: q.qid.clone(),
                ranked: corpus::top_k(&scores, k),
                gold_ranks,
            })
        })
        .collect::<Result<Vec<_>, E>>()?;
    Ok(RetrievalRun::new(system_name, entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CandidatePool, RawCandidate};
    use crate::eval;

    fn fixture() -> QuestionSet {
        let pool = CandidatePool::assign_ids((0..5).map(|i| RawCandidate {
            doc_id: format!("d{i}"),
            sentence_index: 0,
            sentence: format!("s{i}"),
            context: format!("s{i}"),
            title: None,
        }))
        .unwrap();
        QuestionSet::new(
            vec![
                Question {
                    qid: "a".into(),
                    text: "x".into(),
                    gold: [3].into(),
                },
                Question {
                    qid: "b".into(),
                    text: "y".into(),
                    gold: [0, 4].into(),
                },
            ],
            &pool,
        )
        .unwrap()
    }

    fn score(q: &Question) -> Result<Vec<f64>, CorpusError> {
        Ok(match q.qid.as_str() {
            "a" => vec![0.9, 0.8, 0.7, 0.6, 0.5],
            _ => vec![0.1, 0.2, 0.3, 0.4, 0.5],
        })
    }

    #[test]
    fn ranks_only_matches_full() {
        let qs = fixture();
        let full = build_run("s", &qs, RunShape::FULL, score).unwrap();
        let compact = build_run(
            "s",
            &qs,
            RunShape {
                k: Some(1),
                gold_ranks: true,
            },
            score,
        )
        .unwrap();
        assert_eq!(full.get("a").unwrap().ranked.len(), 5);
        assert_eq!(compact.get("a").unwrap().ranked.len(), 1);
        assert_eq!(compact.get("b").unwrap().gold_ranks, Some(vec![5, 1]));
        let meta = eval::ReportMeta::default();
        assert_eq!(
            eval::evaluate(&full, &qs, meta.clone()).unwrap(),
            eval::evaluate(&compact, &qs, meta).unwrap()
        );
    }
}
