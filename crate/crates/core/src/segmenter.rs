//! Rule-based sentence boundary detection.
//!
//! A boundary is placed after a run of terminal punctuation (`.`, `!`, `?`),
//! optionally followed by closing quotes or brackets, when whitespace comes
//! next. A lone `.` ending a token from the abbreviation list does not split.
//! Whitespace containing two or more newlines always splits.
//!
//! All offsets are in `char`s, not bytes.

use std::collections::HashSet;
use std::path::Path;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

static DEFAULT: LazyLock<Segmenter> =
    LazyLock::new(|| Segmenter::from_list(BUNDLED_ABBREVIATIONS));

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("span ({start}, {end}) is out of bounds for a context of {len} chars")]
    OutOfBounds { start: usize, end: usize, len: usize },
}

/// Half-open `[start, end)` char range of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

/// Where an answer span falls relative to the sentence spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanLocation {
    Sentence(usize),
    MultiSentence,
    /// The span touches no sentence at all (only inter-sentence whitespace).
    Unanchored,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        DEFAULT.clone()
    }
}

impl Segmenter {
    /// Parses a one-token-per-line list; blank lines and `#` comments are skipped.
    pub fn from_list(text: &str) -> Self {
        let abbreviations = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let l = l.to_lowercase();
                if l.ends_with('.') {
                    l
                } else {
                    format!("{l}.")
                }
            })
            .collect();
        Self { abbreviations }
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::from_list(&std::fs::read_to_string(path)?))
    }

    pub fn abbreviations(&self) -> impl Iterator<Item = &str> {
        self.abbreviations.iter().map(String::as_str)
    }

    pub fn split(&self, context: &str) -> Vec<SentenceSpan> {
        let chars: Vec<char> = context.chars().collect();
        let n = chars.len();
        let mut cuts = Vec::new();
        let mut i = 0;
        while i < n {
            let c = chars[i];
            if is_terminal(c) {
                let run_start = i;
                let mut j = i + 1;
                while j < n && is_terminal(chars[j]) {
                    j += 1;
                }
                let run_end = j;
                while j < n && is_closing(chars[j]) {
                    j += 1;
                }
                if j < n && chars[j].is_whitespace() {
                    let lone_period = run_end - run_start == 1 && c == '.';
                    if !(lone_period && self.ends_abbreviation(&chars, run_start)) {
                        cuts.push(j);
                    }
                }
                i = j;
            } else if c.is_whitespace() {
                let mut j = i;
                let mut newlines = 0;
                while j < n && chars[j].is_whitespace() {
                    if chars[j] == '\n' {
                        newlines += 1;
                    }
                    j += 1;
                }
                if newlines >= 2 {
                    cuts.push(i);
                }
                i = j;
            } else {
                i += 1;
            }
        }
        cuts.push(n);

        let mut spans = Vec::with_capacity(cuts.len());
        let mut from = 0;
        for cut in cuts {
            if let Some(span) = trimmed(&chars, from, cut) {
                spans.push(span);
            }
            from = cut;
        }
        spans
    }

    /// True if the token ending at `period` (inclusive) is a listed abbreviation.
    fn ends_abbreviation(&self, chars: &[char], period: usize) -> bool {
        let mut start = period;
        while start > 0 && !chars[start - 1].is_whitespace() {
            start -= 1;
        }
        while start < period && is_opening(chars[start]) {
            start += 1;
        }
        let token: String = chars[start..=period].iter().collect::<String>().to_lowercase();
        self.abbreviations.contains(&token)
    }
}

/// Splits with the bundled abbreviation list.
pub fn split_sentences(context: &str) -> Vec<SentenceSpan> {
    DEFAULT.split(context)
}

/// Finds the sentence wholly containing the half-open char span `[start, end)`.
///
/// A span that spills into surrounding whitespace still belongs to the one
/// sentence it overlaps.
pub fn locate_span(
    sentences: &[SentenceSpan],
    context_len: usize,
    (start, end): (usize, usize),
) -> Result<SpanLocation, SegmentError> {
    if start > end || end > context_len {
        return Err(SegmentError::OutOfBounds {
            start,
            end,
            len: context_len,
        });
    }
    if start == end {
        return Ok(sentences
            .iter()
            .position(|s| s.start <= start && start < s.end)
            .map_or(SpanLocation::Unanchored, SpanLocation::Sentence));
    }
    // first sentence ending after `start`
    let first = sentences.partition_point(|s| s.end <= start);
    let mut hit = None;
    for (k, s) in sentences.iter().enumerate().skip(first) {
        if s.start >= end {
            break;
        }
        if hit.is_some() {
            return Ok(SpanLocation::MultiSentence);
        }
        hit = Some(k);
    }
    Ok(hit.map_or(SpanLocation::Unanchored, SpanLocation::Sentence))
}

/// Extracts the text of a span from `context`.
pub fn span_text(context: &str, span: SentenceSpan) -> String {
    context.chars().skip(span.start).take(span.end - span.start).collect()
}

fn trimmed(chars: &[char], mut from: usize, mut to: usize) -> Option<SentenceSpan> {
    while from < to && chars[from].is_whitespace() {
        from += 1;
    }
    while to > from && chars[to - 1].is_whitespace() {
        to -= 1;
    }
    (from < to).then_some(SentenceSpan {
        start: from,
        end: to,
    })
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '»' | '”' | '’')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '{' | '«' | '“' | '‘')
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(context: &str) -> Vec<String> {
        split_sentences(context)
            .into_iter()
            .map(|s| span_text(context, s))
            .collect()
    }

    #[test]
    fn splits_after_terminal() {
        assert_eq!(
            texts("It worked. In 1523 Cortes sent the first shipment to Spain."),
            vec!["It worked.", "In 1523 Cortes sent the first shipment to Spain."]
        );
    }

    #[test]
    fn abbreviation_suppresses_split() {
        assert_eq!(texts("Dr. Smith arrived."), vec!["Dr. Smith arrived."]);
        assert_eq!(
            texts("He moved to the U.S. in 1990. Then he left."),
            vec!["He moved to the U.S. in 1990.", "Then he left."]
        );
        assert_eq!(texts("See (Fig. 3) for details."), vec!["See (Fig. 3) for details."]);
    }

    #[test]
    fn empty_input() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        assert_eq!(
            texts("He said \"Stop!\" Then he ran. Did he (really?) Yes."),
            vec!["He said \"Stop!\"", "Then he ran.", "Did he (really?)", "Yes."]
        );
    }

    #[test]
    fn decimals_and_ellipsis() {
        assert_eq!(texts("Pi is 3.14 roughly. Ok"), vec!["Pi is 3.14 roughly.", "Ok"]);
        assert_eq!(texts("Wait... Go!"), vec!["Wait...", "Go!"]);
    }

    #[test]
    fn paragraph_break_forces_boundary() {
        assert_eq!(texts("A heading\n\nBody text here"), vec!["A heading", "Body text here"]);
        assert_eq!(texts("one line\nsame sentence"), vec!["one line\nsame sentence"]);
    }

    #[test]
    fn custom_list_replaces_bundled() {
        let seg = Segmenter::from_list("foo\n");
        let ctx = "A foo. B. Dr. C.";
        let got: Vec<_> = seg.split(ctx).into_iter().map(|s| span_text(ctx, s)).collect();
        assert_eq!(got, vec!["A foo. B.", "Dr.", "C."]);
    }

    #[test]
    fn locate_examples() {
        let s = [
            SentenceSpan { start: 0, end: 10 },
            SentenceSpan { start: 11, end: 30 },
        ];
        assert_eq!(locate_span(&s, 30, (12, 18)), Ok(SpanLocation::Sentence(1)));
        assert_eq!(locate_span(&s, 30, (8, 15)), Ok(SpanLocation::MultiSentence));
        assert!(matches!(
            locate_span(&s, 30, (200, 210)),
            Err(SegmentError::OutOfBounds { .. })
        ));
        assert_eq!(locate_span(&s, 30, (10, 11)), Ok(SpanLocation::Unanchored));
        assert_eq!(locate_span(&s, 30, (5, 11)), Ok(SpanLocation::Sentence(0)));
    }

    fn brute_locate(spans: &[SentenceSpan], (start, end): (usize, usize)) -> SpanLocation {
        let hits: Vec<usize> = spans
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                if start == end {
                    s.start <= start && start < s.end
                } else {
                    (start..end).any(|p| s.start <= p && p < s.end)
                }
            })
            .map(|(k, _)| k)
            .collect();
        match hits.len() {
            0 => SpanLocation::Unanchored,
            1 => SpanLocation::Sentence(hits[0]),
            _ => SpanLocation::MultiSentence,
        }
    }

    fn arb_text() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                4 => "[A-Za-z]{1,6}",
                1 => Just(".".to_string()),
                1 => Just("!".to_string()),
                1 => Just("?\"".to_string()),
                1 => Just("Dr.".to_string()),
                1 => Just("e.g.".to_string()),
                1 => Just("3.5".to_string()),
                1 => Just("\n\n".to_string()),
                1 => Just("\n".to_string()),
                1 => Just("é".to_string()),
            ],
            0..30,
        )
        .prop_flat_map(|words| {
            let n = words.len();
            (Just(words), prop::collection::vec(prop_oneof![Just(" "), Just(""), Just("  ")], n))
        })
        .prop_map(|(words, seps)| {
            words
                .into_iter()
                .zip(seps)
                .map(|(w, s)| format!("{w}{s}"))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn spans_are_sorted_disjoint_and_cover_non_whitespace(text in arb_text()) {
            let chars: Vec<char> = text.chars().collect();
            let spans = split_sentences(&text);
            let mut covered = vec![0u32; chars.len()];
            let mut prev_end = 0;
            for s in &spans {
                prop_assert!(s.start < s.end && s.end <= chars.len());
                prop_assert!(s.start >= prev_end);
                prev_end = s.end;
                for p in s.start..s.end {
                    covered[p] += 1;
                }
            }
            for (p, c) in chars.iter().enumerate() {
                if !c.is_whitespace() {
                    prop_assert_eq!(covered[p], 1);
                } else {
                    prop_assert!(covered[p] <= 1);
                }
            }
            // the gaps between spans are pure whitespace, so the context is reconstructible
            let mut rebuilt = String::new();
            let mut at = 0;
            for s in &spans {
                rebuilt.extend(&chars[at..s.start]);
                rebuilt.extend(&chars[s.start..s.end]);
                at = s.end;
            }
            rebuilt.extend(&chars[at..]);
            prop_assert_eq!(rebuilt, text.clone());
        }

        #[test]
        fn splitting_a_sentence_is_idempotent(text in arb_text()) {
            for s in split_sentences(&text) {
                let sentence = span_text(&text, s);
                prop_assert_eq!(split_sentences(&sentence).len(), 1, "sentence {:?}", sentence);
            }
        }

        #[test]
        fn locate_agrees_with_brute_force(text in arb_text(), a in 0usize..200, len in 0usize..40) {
            let n = text.chars().count();
            let spans = split_sentences(&text);
            let start = a.min(n);
            let end = (start + len).min(n);
            prop_assert_eq!(locate_span(&spans, n, (start, end)).unwrap(), brute_locate(&spans, (start, end)));
        }
    }
}
