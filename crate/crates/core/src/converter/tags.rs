//! Per-dataset handling of the `[DOC]`, `[TLE]`, `[PAR]` and `[SEP]` markup.

use serde::{Deserialize, Serialize};

use super::DatasetKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Doc,
    Tle,
    Par,
    Sep,
}

const TAGS: [(&str, Tag); 4] = [
    ("[DOC]", Tag::Doc),
    ("[TLE]", Tag::Tle),
    ("[PAR]", Tag::Par),
    ("[SEP]", Tag::Sep),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Tag(Tag),
    /// Half-open char range of literal text.
    Text(usize, usize),
}

/// Maps original char offsets to cleaned-context offsets.
///
/// Stored as runs that are copied verbatim; anything between runs (tags,
/// collapsed whitespace) has no image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetMap {
    runs: Vec<Run>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Run {
    clean_start: usize,
    orig_start: usize,
    len: usize,
}

impl OffsetMap {
    pub fn identity(len: usize) -> Self {
        Self {
            runs: vec![Run {
                clean_start: 0,
                orig_start: 0,
                len,
            }],
        }
    }

    /// Maps a half-open original span that lies inside a single run.
    pub fn map_span(&self, (start, end): (usize, usize)) -> Option<(usize, usize)> {
        let k = self.runs.partition_point(|r| r.orig_start + r.len <= start);
        let r = self.runs.get(k)?;
        if r.orig_start <= start && end <= r.orig_start + r.len && start <= end {
            let shift = r.clean_start as isize - r.orig_start as isize;
            Some((
                (start as isize + shift) as usize,
                (end as isize + shift) as usize,
            ))
        } else {
            None
        }
    }
}

/// One tag-free context carved out of a raw record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanContext {
    pub text: String,
    pub title: Option<String>,
    /// Original char ranges making up the title feature.
    pub title_ranges: Vec<(usize, usize)>,
    pub offsets: OffsetMap,
}

/// Where an answer span ends up after tag handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Context { index: usize, span: (usize, usize) },
    Title,
    Unmappable,
}

pub fn place_answer(contexts: &[CleanContext], span: (usize, usize)) -> Placement {
    for (index, c) in contexts.iter().enumerate() {
        if let Some(span) = c.offsets.map_span(span) {
            return Placement::Context { index, span };
        }
    }
    let in_title = contexts.iter().any(|c| {
        c.title_ranges
            .iter()
            .any(|&(s, e)| s <= span.0 && span.1 <= e)
    });
    if in_title {
        Placement::Title
    } else {
        Placement::Unmappable
    }
}

fn lex(chars: &[char]) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < chars.len() {
        let tag = (chars[i] == '[')
            .then(|| {
                TAGS.iter().find(|(lit, _)| {
                    let n = lit.chars().count();
                    i + n <= chars.len() && chars[i..i + n].iter().copied().eq(lit.chars())
                })
            })
            .flatten();
        match tag {
            Some((lit, tag)) => {
                if text_start < i {
                    pieces.push(Piece::Text(text_start, i));
                }
                pieces.push(Piece::Tag(*tag));
                i += lit.len();
                text_start = i;
            }
            None => i += 1,
        }
    }
    if text_start < chars.len() {
        pieces.push(Piece::Text(text_start, chars.len()));
    }
    pieces
}

fn trim_range(chars: &[char], (mut s, mut e): (usize, usize)) -> Option<(usize, usize)> {
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    (s < e).then_some((s, e))
}

fn text_ranges(chars: &[char], pieces: &[Piece]) -> Vec<(usize, usize)> {
    pieces
        .iter()
        .filter_map(|p| match *p {
            Piece::Text(s, e) => trim_range(chars, (s, e)),
            Piece::Tag(_) => None,
        })
        .collect()
}

/// Joins trimmed original ranges with single spaces.
fn join(chars: &[char], ranges: &[(usize, usize)]) -> (String, OffsetMap) {
    let mut text = String::new();
    let mut runs = Vec::with_capacity(ranges.len());
    let mut clean = 0;
    for (k, &(s, e)) in ranges.iter().enumerate() {
        if k > 0 {
            text.push(' ');
            clean += 1;
        }
        text.extend(&chars[s..e]);
        runs.push(Run {
            clean_start: clean,
            orig_start: s,
            len: e - s,
        });
        clean += e - s;
    }
    (text, OffsetMap { runs })
}

fn split_on(pieces: &[Piece], sep: Tag) -> Vec<&[Piece]> {
    pieces.split(|p| *p == Piece::Tag(sep)).collect()
}

/// Title is the text before the `divider` tag, content the text after it.
fn titled_context(chars: &[char], chunk: &[Piece], divider: Tag) -> Option<CleanContext> {
    let (title_part, body_part) = match chunk.iter().position(|p| *p == Piece::Tag(divider)) {
        Some(k) => (&chunk[..k], &chunk[k + 1..]),
        None => (&chunk[..0], chunk),
    };
    let body = text_ranges(chars, body_part);
    if body.is_empty() {
        return None;
    }
    let title_ranges = text_ranges(chars, title_part);
    let title = (!title_ranges.is_empty()).then(|| join(chars, &title_ranges).0);
    let (text, offsets) = join(chars, &body);
    Some(CleanContext {
        text,
        title,
        title_ranges,
        offsets,
    })
}

/// Splits a raw context into tag-free contexts according to the dataset's rule.
pub fn strip_tags(kind: DatasetKind, context: &str) -> Vec<CleanContext> {
    let passthrough = || CleanContext {
        text: context.to_string(),
        title: None,
        title_ranges: Vec::new(),
        offsets: OffsetMap::identity(context.chars().count()),
    };
    let chars: Vec<char> = context.chars().collect();
    match kind.tag_rule() {
        TagRule::Passthrough => vec![passthrough()],
        TagRule::StripAll => {
            let ranges = text_ranges(&chars, &lex(&chars));
            let (text, offsets) = join(&chars, &ranges);
            vec![CleanContext {
                text,
                title: None,
                title_ranges: Vec::new(),
                offsets,
            }]
        }
        TagRule::DocTitlePar => split_on(&lex(&chars), Tag::Doc)
            .into_iter()
            .filter_map(|chunk| titled_context(&chars, chunk, Tag::Par))
            .collect(),
        TagRule::ParTitleSep => split_on(&lex(&chars), Tag::Par)
            .into_iter()
            .filter_map(|chunk| titled_context(&chars, chunk, Tag::Sep))
            .collect(),
    }
}

/// How a dataset's markup is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagRule {
    /// `[DOC]` separates contexts, `[TLE] … [PAR]` is the title.
    DocTitlePar,
    /// `[PAR]` separates contexts, `… [SEP]` is the title.
    ParTitleSep,
    /// Every tag is deleted; one context remains.
    StripAll,
    Passthrough,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generic_is_identity() {
        let got = strip_tags(DatasetKind::Generic, "plain text");
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].text, "plain text");
        assert_eq!(got[0].title, None);
        assert_eq!(got[0].offsets, OffsetMap::identity(10));
    }

    #[test]
    fn searchqa_splits_docs_and_titles() {
        let raw = "[DOC] [TLE]T1 [PAR]body one [DOC] [TLE]T2 [PAR]body two";
        let got = strip_tags(DatasetKind::SearchQA, raw);
        let texts: Vec<_> = got.iter().map(|c| c.text.as_str()).collect();
        let titles: Vec<_> = got.iter().map(|c| c.title.as_deref()).collect();
        assert_eq!(texts, ["body one", "body two"]);
        assert_eq!(titles, [Some("T1"), Some("T2")]);
        // "one" sits at chars 24..27 of the raw string
        assert_eq!(&raw[24..27], "one");
        assert_eq!(got[0].offsets.map_span((24, 27)), Some((5, 8)));
        assert_eq!(place_answer(&got, (11, 13)), Placement::Title);
        assert_eq!(place_answer(&got, (24, 40)), Placement::Unmappable);
    }

    #[test]
    fn triviaqa_removes_all_tags() {
        let raw = "[DOC] [TLE]X [PAR]abc";
        let got = strip_tags(DatasetKind::TriviaQA, raw);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].text, "X abc");
        assert_eq!(got[0].title, None);
        assert_eq!(got[0].offsets.map_span((18, 21)), Some((2, 5)));
        assert_eq!(got[0].offsets.map_span((11, 12)), Some((0, 1)));
    }

    #[test]
    fn hotpotqa_uses_par_and_sep() {
        let raw = "[PAR] [TLE] Chicken Run [SEP] Chicken Run is a 2000 film. [PAR] [TLE] Aardman [SEP] A studio.";
        let got = strip_tags(DatasetKind::HotpotQA, raw);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].text, "Chicken Run is a 2000 film.");
        assert_eq!(got[0].title.as_deref(), Some("Chicken Run"));
        assert_eq!(got[1].text, "A studio.");
        assert_eq!(got[1].title.as_deref(), Some("Aardman"));
    }

    #[test]
    fn unknown_brackets_are_literal() {
        let got = strip_tags(DatasetKind::TriviaQA, "a [FOO] b [DOC]");
        assert_eq!(got[0].text, "a [FOO] b");
    }

    #[test]
    fn empty_docs_are_dropped() {
        let got = strip_tags(DatasetKind::SearchQA, "[DOC] [TLE] only title [PAR] [DOC] [TLE]t [PAR] x");
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].text, "x");
    }
}
