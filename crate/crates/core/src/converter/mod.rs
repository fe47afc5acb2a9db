//! Span-annotated QA corpora → sentence-level retrieval tasks.
//!
//! Every sentence of every cleaned context becomes a candidate. Each answer
//! span is mapped to the sentence containing it; spans that straddle a
//! sentence boundary, sit only in a title feature, or cannot be mapped
//! through tag removal are dropped, and a question left with no answers is
//! dropped with them.

mod mrqa;
mod stats;
mod tags;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidatePool, CorpusError, Question, QuestionSet, RawCandidate};
use crate::segmenter::{self, SegmentError, Segmenter, SpanLocation};

pub use mrqa::{open_input, parse_stream, RawQa, RawRecord};
pub use stats::{compute_stats, CorpusStats, OVERLAP_DEFINITION};
pub use tags::{place_answer, strip_tags, CleanContext, OffsetMap, Placement, TagRule};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {record}, question {qid}: {source}")]
    Span {
        record: usize,
        qid: String,
        #[source]
        source: SegmentError,
    },
    #[error("unknown dataset kind {0:?}")]
    UnknownKind(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    SearchQA,
    TriviaQA,
    HotpotQA,
    SQuAD,
    NQ,
    BioASQ,
    RelationExtraction,
    TextbookQA,
    Generic,
}

impl DatasetKind {
    pub fn tag_rule(self) -> TagRule {
        match self {
            DatasetKind::SearchQA => TagRule::DocTitlePar,
            DatasetKind::HotpotQA => TagRule::ParTitleSep,
            DatasetKind::TriviaQA => TagRule::StripAll,
            DatasetKind::SQuAD
            | DatasetKind::NQ
            | DatasetKind::BioASQ
            | DatasetKind::RelationExtraction
            | DatasetKind::TextbookQA
            | DatasetKind::Generic => TagRule::Passthrough,
        }
    }
}

impl FromStr for DatasetKind {
    type Err = ConvertError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "searchqa" => DatasetKind::SearchQA,
            "triviaqa" => DatasetKind::TriviaQA,
            "hotpotqa" => DatasetKind::HotpotQA,
            "squad" => DatasetKind::SQuAD,
            "nq" | "naturalquestions" => DatasetKind::NQ,
            "bioasq" => DatasetKind::BioASQ,
            "re" | "relationextraction" => DatasetKind::RelationExtraction,
            "textbookqa" => DatasetKind::TextbookQA,
            "generic" => DatasetKind::Generic,
            _ => return Err(ConvertError::UnknownKind(s.to_string())),
        })
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Why answers and questions were dropped during conversion.
///
/// Question-level counts plus `kept_questions` always add up to
/// `input_questions`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub input_questions: usize,
    pub kept_questions: usize,
    /// Questions that had no answer spans at all.
    pub dropped_no_answer: usize,
    /// Every span of the question was in a title feature.
    pub dropped_title_only: usize,
    /// No usable span left and at least one crossed a sentence boundary.
    pub dropped_multi_sentence: usize,
    /// No usable span left, none multi-sentence, some unmappable.
    pub dropped_unmappable: usize,
    pub spans_title_only: usize,
    pub spans_multi_sentence: usize,
    pub spans_unmappable: usize,
}

impl ExclusionReport {
    pub fn dropped_questions(&self) -> usize {
        self.dropped_no_answer
            + self.dropped_title_only
            + self.dropped_multi_sentence
            + self.dropped_unmappable
    }

    fn absorb(&mut self, other: &ExclusionReport) {
        self.input_questions += other.input_questions;
        self.kept_questions += other.kept_questions;
        self.dropped_no_answer += other.dropped_no_answer;
        self.dropped_title_only += other.dropped_title_only;
        self.dropped_multi_sentence += other.dropped_multi_sentence;
        self.dropped_unmappable += other.dropped_unmappable;
        self.spans_title_only += other.spans_title_only;
        self.spans_multi_sentence += other.spans_multi_sentence;
        self.spans_unmappable += other.spans_unmappable;
    }
}

#[derive(Debug, Clone)]
pub struct Conversion {
    pub pool: CandidatePool,
    pub questions: QuestionSet,
    pub report: ExclusionReport,
}

/// Per-record output with record-local candidate offsets.
struct RecordOutput {
    candidates: Vec<RawCandidate>,
    questions: Vec<(String, String, BTreeSet<u32>)>,
    report: ExclusionReport,
}

fn convert_record(
    record_no: usize,
    record: &RawRecord,
    kind: DatasetKind,
    segmenter: &Segmenter,
) -> Result<RecordOutput, ConvertError> {
    let orig: Vec<char> = record.context.chars().collect();
    let contexts = strip_tags(kind, &record.context);

    let mut candidates = Vec::new();
    // per context: (first local candidate index, sentence spans, char length)
    let mut layouts = Vec::with_capacity(contexts.len());
    for (ci, ctx) in contexts.iter().enumerate() {
        let spans = segmenter.split(&ctx.text);
        layouts.push((candidates.len(), spans.clone(), ctx.text.chars().count()));
        for (si, span) in spans.iter().enumerate() {
            candidates.push(RawCandidate {
                doc_id: format!("{record_no}.{ci}"),
                sentence_index: si as u32,
                sentence: segmenter::span_text(&ctx.text, *span),
                context: ctx.text.clone(),
                title: ctx.title.clone(),
            });
        }
    }

    let mut report = ExclusionReport::default();
    let mut questions = Vec::new();
    for qa in &record.qas {
        report.input_questions += 1;
        if qa.spans.is_empty() {
            report.dropped_no_answer += 1;
            continue;
        }
        let mut gold = BTreeSet::new();
        let (mut title, mut multi, mut unmappable) = (0, 0, 0);
        for &(s, e) in &qa.spans {
            if e > orig.len() {
                return Err(ConvertError::Span {
                    record: record_no,
                    qid: qa.qid.clone(),
                    source: SegmentError::OutOfBounds {
                        start: s,
                        end: e,
                        len: orig.len(),
                    },
                });
            }
            let (mut s, mut e) = (s, e);
            while s < e && orig[s].is_whitespace() {
                s += 1;
            }
            while e > s && orig[e - 1].is_whitespace() {
                e -= 1;
            }
            // title filtering runs first
            match place_answer(&contexts, (s, e)) {
                Placement::Title => title += 1,
                Placement::Unmappable => unmappable += 1,
                Placement::Context { index, span } => {
                    let (first, ref spans, len) = layouts[index];
                    let located = segmenter::locate_span(spans, len, span).map_err(|source| {
                        ConvertError::Span {
                            record: record_no,
                            qid: qa.qid.clone(),
                            source,
                        }
                    })?;
                    match located {
                        SpanLocation::Sentence(k) => {
                            gold.insert((first + k) as u32);
                        }
                        SpanLocation::MultiSentence => multi += 1,
                        SpanLocation::Unanchored => unmappable += 1,
                    }
                }
            }
        }
        report.spans_title_only += title;
        report.spans_multi_sentence += multi;
        report.spans_unmappable += unmappable;
        if !gold.is_empty() {
            report.kept_questions += 1;
            questions.push((qa.qid.clone(), qa.question.clone(), gold));
        } else if multi == 0 && unmappable == 0 {
            report.dropped_title_only += 1;
        } else if multi > 0 {
            report.dropped_multi_sentence += 1;
        } else {
            report.dropped_unmappable += 1;
        }
    }
    Ok(RecordOutput {
        candidates,
        questions,
        report,
    })
}

/// Converts parsed records. Records are processed in parallel; ids are
/// assigned afterwards in input order, so output does not depend on the
/// worker count.
pub fn convert(
    records: &[RawRecord],
    kind: DatasetKind,
    segmenter: &Segmenter,
) -> Result<Conversion, ConvertError> {
    let outputs: Vec<RecordOutput> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| convert_record(i, r, kind, segmenter))
        .collect::<Result<_, _>>()?;

    let mut raw = Vec::new();
    let mut questions = Vec::new();
    let mut report = ExclusionReport::default();
    for out in outputs {
        let offset = raw.len() as u32;
        raw.extend(out.candidates);
        questions.extend(out.questions.into_iter().map(|(qid, text, gold)| Question {
            qid,
            text,
            gold: gold.into_iter().map(|g| g + offset).collect(),
        }));
        report.absorb(&out.report);
    }
    let pool = CandidatePool::assign_ids(raw)?;
    let questions = QuestionSet::new(questions, &pool)?;
    Ok(Conversion {
        pool,
        questions,
        report,
    })
}

/// One training example: a question with one of its gold sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub qid: String,
    pub question: String,
    pub answer: String,
    pub context: String,
}

/// One pair per (question, gold answer), in question then id order.
pub fn training_pairs(pool: &CandidatePool, questions: &QuestionSet) -> Vec<TrainingPair> {
    questions
        .iter()
        .flat_map(|q| {
            q.gold.iter().filter_map(move |&id| {
                pool.get(id).map(|c| TrainingPair {
                    qid: q.qid.clone(),
                    question: q.text.clone(),
                    answer: c.sentence.clone(),
                    context: c.context.clone(),
                })
            })
        })
        .collect()
}
