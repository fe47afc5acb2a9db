//! P@1 and MRR over retrieval runs, the context ablation delta table and
//! cross-system disagreement.
//!
//! All metrics are percentages. MRR sums reciprocal ranks grouped by rank in
//! ascending order with compensated summation, so the result does not depend
//! on question order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidateId, Question, QuestionSet, RankedList, RetrievalRun};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("question {0}: no gold candidate in the ranking (truncated run? rerun with full k or --ranks-only)")]
    GoldMissingFromRanking(String),
    #[error("question {0} has no ranked list in the run")]
    MissingQuestion(String),
    #[error("run contains question {0}, which is not in the question set")]
    UnexpectedQuestion(String),
    #[error("question {0}: ranked list is empty")]
    EmptyRanking(String),
    #[error("question sets differ: {0}")]
    MismatchedQuestionSets(String),
    #[error("reports come from different systems: {0} vs {1}")]
    MismatchedSystems(String, String),
    #[error("no questions to evaluate")]
    EmptyQuestionSet,
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// 1-based position of the first gold id, if any gold id is ranked.
pub fn rank_of_first_correct(ranked: &[CandidateId], gold: &BTreeSet<CandidateId>) -> Option<u32> {
    ranked.iter().position(|id| gold.contains(id)).map(|p| p as u32 + 1)
}

/// Rank of the first correct candidate for one entry. Stored gold ranks take
/// precedence over the (possibly truncated) list.
pub fn entry_rank(entry: &RankedList, question: &Question) -> Result<u32> {
    if let Some(ranks) = &entry.gold_ranks {
        return ranks
            .iter()
            .copied()
            .min()
            .ok_or_else(|| EvalError::GoldMissingFromRanking(question.qid.clone()));
    }
    let ids: Vec<CandidateId> = entry.ranked.iter().map(|s| s.id).collect();
    rank_of_first_correct(&ids, &question.gold)
        .ok_or_else(|| EvalError::GoldMissingFromRanking(question.qid.clone()))
}

fn check_coverage(run: &RetrievalRun, questions: &QuestionSet) -> Result<()> {
    if questions.is_empty() {
        return Err(EvalError::EmptyQuestionSet);
    }
    for e in run.entries() {
        if questions.get(&e.qid).is_none() {
            return Err(EvalError::UnexpectedQuestion(e.qid.clone()));
        }
    }
    for q in questions {
        if run.get(&q.qid).is_none() {
            return Err(EvalError::MissingQuestion(q.qid.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRank {
    pub qid: String,
    pub rank: u32,
}

/// Per-question ranks, in question-set order.
pub fn question_ranks(run: &RetrievalRun, questions: &QuestionSet) -> Result<Vec<QuestionRank>> {
    check_coverage(run, questions)?;
    questions
        .questions()
        .par_iter()
        .map(|q| {
            let entry = run.get(&q.qid).expect("coverage checked");
            Ok(QuestionRank {
                qid: q.qid.clone(),
                rank: entry_rank(entry, q)?,
            })
        })
        .collect()
}

/// 100 × fraction of ranks equal to 1.
pub fn precision_at_1(ranks: &[u32]) -> f64 {
    precision_at_k(ranks, 1)
}

/// 100 × fraction of ranks within the top `k`.
pub fn precision_at_k(ranks: &[u32], k: u32) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    100.0 * hits as f64 / ranks.len() as f64
}

/// 100 × mean reciprocal rank.
pub fn mean_reciprocal_rank(ranks: &[u32]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    for &r in ranks {
        *histogram.entry(r).or_insert(0) += 1;
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (r, count) in histogram {
        let x = count as f64 / r as f64;
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    100.0 * (sum + comp) / ranks.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_context: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub n_questions: usize,
    pub p_at_1: f64,
    pub mrr: f64,
    pub ranks: Vec<QuestionRank>,
}

pub fn evaluate(run: &RetrievalRun, questions: &QuestionSet, meta: ReportMeta) -> Result<EvalReport> {
    let ranks = question_ranks(run, questions)?;
    let values: Vec<u32> = ranks.iter().map(|r| r.rank).collect();
    Ok(EvalReport {
        meta,
        n_questions: ranks.len(),
        p_at_1: precision_at_1(&values),
        mrr: mean_reciprocal_rank(&values),
        ranks,
    })
}

fn context_label(c: Option<bool>) -> &'static str {
    match c {
        Some(true) => "with context",
        Some(false) => "no context",
        None => "-",
    }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24}{:<16}{:<10}{:<14}{:>10}{:>10}{:>10}",
            "system", "dataset", "tokenizer", "context", "questions", "P@1", "MRR"
        );
        let _ = writeln!(
            s,
            "{:<24}{:<16}{:<10}{:<14}{:>10}{:>10.2}{:>10.2}",
            self.meta.system,
            self.meta.dataset.as_deref().unwrap_or("-"),
            self.meta.tokenizer.as_deref().unwrap_or("-"),
            context_label(self.meta.use_context),
            self.n_questions,
            self.p_at_1,
            self.mrr
        );
        s
    }

    fn qids(&self) -> BTreeSet<&str> {
        self.ranks.iter().map(|r| r.qid.as_str()).collect()
    }
}

fn same_questions(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> Result<()> {
    if a == b {
        return Ok(());
    }
    let only_a = a.difference(b).next();
    let only_b = b.difference(a).next();
    let detail = match (only_a, only_b) {
        (Some(q), _) => format!("{q} appears only in the first"),
        (None, Some(q)) => format!("{q} appears only in the second"),
        (None, None) => unreachable!(),
    };
    Err(EvalError::MismatchedQuestionSets(detail))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub p_at_1: f64,
    pub mrr: f64,
}

/// Signed change when context is removed (no-context minus with-context).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub system: String,
    pub n_questions: usize,
    pub with_context: MetricPair,
    pub without_context: MetricPair,
    pub delta: MetricPair,
}

pub fn ablation_compare(with_context: &EvalReport, without_context: &EvalReport) -> Result<AblationDelta> {
    if with_context.meta.system != without_context.meta.system {
        return Err(EvalError::MismatchedSystems(
            with_context.meta.system.clone(),
            without_context.meta.system.clone(),
        ));
    }
    same_questions(&with_context.qids(), &without_context.qids())?;
    let pair = |r: &EvalReport| MetricPair {
        p_at_1: r.p_at_1,
        mrr: r.mrr,
    };
    Ok(AblationDelta {
        system: with_context.meta.system.clone(),
        n_questions: with_context.n_questions,
        with_context: pair(with_context),
        without_context: pair(without_context),
        delta: MetricPair {
            p_at_1: without_context.p_at_1 - with_context.p_at_1,
            mrr: without_context.mrr - with_context.mrr,
        },
    })
}

impl AblationDelta {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>14}{:>14}{:>10}", "metric", "with context", "no context", "delta");
        for (name, w, wo, d) in [
            ("P@1", self.with_context.p_at_1, self.without_context.p_at_1, self.delta.p_at_1),
            ("MRR", self.with_context.mrr, self.without_context.mrr, self.delta.mrr),
        ] {
            let _ = writeln!(s, "{name:<8}{w:>14.2}{wo:>14.2}{d:>+10.2}");
        }
        s
    }
}

/// Counts by correctness of each system's top-1 candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub both_correct: usize,
    pub a_only: usize,
    pub b_only: usize,
    pub both_wrong: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub system_a: String,
    pub system_b: String,
    pub n_questions: usize,
    pub n_disagree: usize,
    pub disagree_percent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Breakdown>,
}

/// Fraction of questions whose top-1 ids differ. With `questions`, both runs
/// must cover exactly that set and the correctness breakdown is filled in;
/// without, the runs only need to cover the same questions.
pub fn disagreement(
    a: &RetrievalRun,
    b: &RetrievalRun,
    questions: Option<&QuestionSet>,
) -> Result<DisagreementReport> {
    let qa: BTreeSet<&str> = a.entries().iter().map(|e| e.qid.as_str()).collect();
    let qb: BTreeSet<&str> = b.entries().iter().map(|e| e.qid.as_str()).collect();
    same_questions(&qa, &qb)?;
    if let Some(qs) = questions {
        let gold: BTreeSet<&str> = qs.iter().map(|q| q.qid.as_str()).collect();
        same_questions(&gold, &qa)?;
    }
    if qa.is_empty() {
        return Err(EvalError::EmptyQuestionSet);
    }
    let top1 = |run: &RetrievalRun, qid: &str| -> Result<CandidateId> {
        run.get(qid)
            .and_then(RankedList::top1)
            .ok_or_else(|| EvalError::EmptyRanking(qid.to_string()))
    };
    let mut n_disagree = 0;
    let mut breakdown = questions.map(|_| Breakdown::default());
    for qid in &qa {
        let (ta, tb) = (top1(a, qid)?, top1(b, qid)?);
        if ta != tb {
            n_disagree += 1;
        }
        if let (Some(bd), Some(qs)) = (breakdown.as_mut(), questions) {
            let q = qs.get(qid).expect("coverage checked");
            match (q.is_gold(ta), q.is_gold(tb)) {
                (true, true) => bd.both_correct += 1,
                (true, false) => bd.a_only += 1,
                (false, true) => bd.b_only += 1,
                (false, false) => bd.both_wrong += 1,
            }
        }
    }
    Ok(DisagreementReport {
        system_a: a.system_name.clone(),
        system_b: b.system_name.clone(),
        n_questions: qa.len(),
        n_disagree,
        disagree_percent: 100.0 * n_disagree as f64 / qa.len() as f64,
        breakdown,
    })
}

impl DisagreementReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "A: {}", self.system_a);
        let _ = writeln!(s, "B: {}", self.system_b);
        let _ = writeln!(s, "{:<20}{:>10}", "questions", self.n_questions);
        let _ = writeln!(s, "{:<20}{:>10}", "top-1 differs", self.n_disagree);
        let _ = writeln!(s, "{:<20}{:>10.2}", "disagreement %", self.disagree_percent);
        if let Some(bd) = &self.breakdown {
            for (k, v) in [
                ("both correct", bd.both_correct),
                ("A only correct", bd.a_only),
                ("B only correct", bd.b_only),
                ("both wrong", bd.both_wrong),
            ] {
                let _ = writeln!(s, "{k:<20}{v:>10}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CandidatePool, RawCandidate, ScoredCandidate};
    use proptest::prelude::*;

    fn ranked(ids: &[CandidateId]) -> Vec<ScoredCandidate> {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| ScoredCandidate {
                id,
                score: -(i as f64),
            })
            .collect()
    }

    fn pool(n: usize) -> CandidatePool {
        CandidatePool::assign_ids((0..n).map(|i| RawCandidate {
            doc_id: format!("d{i}"),
            sentence_index: 0,
            sentence: format!("s{i}"),
            context: format!("s{i}"),
            title: None,
        }))
        .unwrap()
    }

    fn qset(pool: &CandidatePool, golds: &[&[CandidateId]]) -> QuestionSet {
        QuestionSet::new(
            golds
                .iter()
                .enumerate()
                .map(|(i, g)| Question {
                    qid: format!("q{i}"),
                    text: format!("question {i}"),
                    gold: g.iter().copied().collect(),
                })
                .collect(),
            pool,
        )
        .unwrap()
    }

    fn run(name: &str, lists: &[&[CandidateId]]) -> RetrievalRun {
        RetrievalRun::new(
            name,
            lists
                .iter()
                .enumerate()
                .map(|(i, l)| RankedList {
                    qid: format!("q{i}"),
                    ranked: ranked(l),
                    gold_ranks: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rank_examples() {
        let gold: BTreeSet<_> = [2].into();
        assert_eq!(rank_of_first_correct(&[5, 2, 9], &gold), Some(2));
        let gold: BTreeSet<_> = [9, 5].into();
        assert_eq!(rank_of_first_correct(&[5, 2, 9], &gold), Some(1));
        let gold: BTreeSet<_> = [7].into();
        assert_eq!(rank_of_first_correct(&[5, 2, 9], &gold), None);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(format!("{:.2}", precision_at_1(&[1, 2, 4])), "33.33");
        assert_eq!(format!("{:.2}", mean_reciprocal_rank(&[1, 2, 4])), "58.33");
        assert_eq!(precision_at_1(&[1, 1]), 100.0);
        assert_eq!(mean_reciprocal_rank(&[1]), 100.0);
        assert_eq!(precision_at_k(&[1, 2, 4], 2), 200.0 / 3.0);
    }

    #[test]
    fn evaluate_and_errors() {
        let p = pool(4);
        let qs = qset(&p, &[&[1], &[2, 3]]);
        let r = run("x", &[&[1, 0, 2, 3], &[0, 3, 2, 1]]);
        let rep = evaluate(&r, &qs, ReportMeta::default()).unwrap();
        assert_eq!(rep.ranks.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(rep.p_at_1, 50.0);
        assert_eq!(rep.mrr, 75.0);

        let truncated = run("x", &[&[1], &[0]]);
        assert_eq!(
            evaluate(&truncated, &qs, ReportMeta::default()),
            Err(EvalError::GoldMissingFromRanking("q1".into()))
        );
        let partial = run("x", &[&[1, 0, 2, 3]]);
        assert_eq!(
            evaluate(&partial, &qs, ReportMeta::default()),
            Err(EvalError::MissingQuestion("q1".into()))
        );
        let extra = run("x", &[&[1], &[2], &[3]]);
        assert_eq!(
            evaluate(&extra, &qs, ReportMeta::default()),
            Err(EvalError::UnexpectedQuestion("q2".into()))
        );
    }

    #[test]
    fn stored_gold_ranks_are_used() {
        let p = pool(4);
        let qs = qset(&p, &[&[3]]);
        let r = RetrievalRun::new(
            "x",
            vec![RankedList {
                qid: "q0".into(),
                ranked: ranked(&[0]),
                gold_ranks: Some(vec![4]),
            }],
        )
        .unwrap();
        let rep = evaluate(&r, &qs, ReportMeta::default()).unwrap();
        assert_eq!(rep.ranks[0].rank, 4);
        assert_eq!(rep.mrr, 25.0);
    }

    #[test]
    fn ablation_examples() {
        let meta = |c| ReportMeta {
            system: "bm25".into(),
            use_context: Some(c),
            ..Default::default()
        };
        let mk = |c, p, m| EvalReport {
            meta: meta(c),
            n_questions: 1,
            p_at_1: p,
            mrr: m,
            ranks: vec![QuestionRank { qid: "q".into(), rank: 1 }],
        };
        let d = ablation_compare(&mk(true, 60.0, 70.0), &mk(false, 56.0, 70.0)).unwrap();
        assert_eq!(d.delta.p_at_1, -4.0);
        assert_eq!(d.delta.mrr, 0.0);
        let same = ablation_compare(&mk(true, 60.0, 70.0), &mk(true, 60.0, 70.0)).unwrap();
        assert_eq!(same.delta, MetricPair { p_at_1: 0.0, mrr: 0.0 });
        let mut other = mk(false, 1.0, 1.0);
        other.ranks[0].qid = "z".into();
        assert!(matches!(
            ablation_compare(&mk(true, 1.0, 1.0), &other),
            Err(EvalError::MismatchedQuestionSets(_))
        ));
        other.meta.system = "dense".into();
        assert!(matches!(
            ablation_compare(&mk(true, 1.0, 1.0), &other),
            Err(EvalError::MismatchedSystems(..))
        ));
        assert!(d.to_table().contains("-4.00"));
    }

    #[test]
    fn disagreement_examples() {
        let p = pool(3);
        let qs = qset(&p, &[&[0], &[1], &[2]]);
        let a = run("a", &[&[0, 1, 2], &[0, 1, 2], &[2, 1, 0]]);
        let same = disagreement(&a, &a, Some(&qs)).unwrap();
        assert_eq!(same.disagree_percent, 0.0);
        let b = run("b", &[&[1, 0, 2], &[1, 0, 2], &[0, 1, 2]]);
        let d = disagreement(&a, &b, Some(&qs)).unwrap();
        assert_eq!(d.n_disagree, 3);
        assert_eq!(d.disagree_percent, 100.0);
        assert_eq!(
            d.breakdown.unwrap(),
            Breakdown {
                both_correct: 0,
                a_only: 2,
                b_only: 1,
                both_wrong: 0
            }
        );
        assert_eq!(disagreement(&a, &b, None).unwrap().breakdown, None);
        let short = run("c", &[&[0]]);
        assert!(matches!(
            disagreement(&a, &short, None),
            Err(EvalError::MismatchedQuestionSets(_))
        ));
    }

    proptest! {
        #[test]
        fn mrr_bounds_and_order_invariance(mut ranks in prop::collection::vec(1u32..50, 1..40), seed in any::<u64>()) {
            let p1 = precision_at_1(&ranks);
            let m = mean_reciprocal_rank(&ranks);
            prop_assert!(p1 <= m + 1e-12);
            prop_assert!(m <= 100.0 + 1e-12);
            use rand::{seq::SliceRandom, SeedableRng};
            let before = m.to_bits();
            ranks.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(mean_reciprocal_rank(&ranks).to_bits(), before);
        }

        #[test]
        fn monotone_score_transform_keeps_metrics(scores in prop::collection::vec(-5.0f64..5.0, 2..20), gold in 0usize..20) {
            let n = scores.len();
            let g = (gold % n) as CandidateId;
            let rank = |s: &[f64]| {
                let ids: Vec<_> = crate::corpus::top_k(s, n).iter().map(|c| c.id).collect();
                rank_of_first_correct(&ids, &[g].into()).unwrap()
            };
            let transformed: Vec<f64> = scores.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(rank(&scores), rank(&transformed));
        }
    }
}
