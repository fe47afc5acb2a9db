//! Two tokenization regimes.
//!
//! * `word`: whitespace split with punctuation broken out, no normalization.
//! * `wpm`: BERT-style normalization followed by greedy longest-match-first
//!   WordPiece segmentation against a fixed vocabulary.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

pub const CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_UNKNOWN: &str = "[UNK]";
/// Words longer than this many chars become the unknown token.
pub const MAX_WORD_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("vocabulary is empty")]
    EmptyVocab,
    #[error("vocabulary has no unknown token {0:?}")]
    MissingUnknown(String),
    #[error("vocabulary token {token:?} repeated on line {line}")]
    DuplicateToken { token: String, line: usize },
    #[error("unknown tokenizer {0:?} (expected word or wpm)")]
    UnknownRegime(String),
    #[error("the wpm tokenizer needs a vocabulary file")]
    VocabRequired,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token → id map; ids are line numbers of the vocab file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    unknown: u32,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, unknown: &str) -> Result<Self, TokenizeError> {
        if tokens.is_empty() {
            return Err(TokenizeError::EmptyVocab);
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizeError::DuplicateToken {
                    token: t.clone(),
                    line: i + 1,
                });
            }
        }
        let unknown = *ids
            .get(unknown)
            .ok_or_else(|| TokenizeError::MissingUnknown(unknown.to_string()))?;
        Ok(Self {
            tokens,
            ids,
            unknown,
        })
    }

    /// One token per line; line number (from 0) is the id.
    pub fn from_text(text: &str) -> Result<Self, TokenizeError> {
        let tokens = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        Self::new(tokens, DEFAULT_UNKNOWN)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TokenizeError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn unknown_id(&self) -> u32 {
        self.unknown
    }

    /// sha256 over the newline-joined token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Token ids with their surface strings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub surfaces: Vec<String>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Unicode category P plus every ASCII symbol.
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
        } else if is_punctuation(c) {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            out.push(&text[i..i + c.len_utf8()]);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Splits on whitespace and breaks every punctuation char into its own token.
/// Case and accents are preserved.
pub fn word_tokenize(text: &str) -> Vec<String> {
    split_words(text).into_iter().map(str::to_string).collect()
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    matches!(
        get_general_category(c),
        GeneralCategory::Control | GeneralCategory::Format
    )
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

/// Lowercase, strip accents, drop control characters, pad CJK with spaces.
pub fn normalize(text: &str) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\0' || c == '\u{FFFD}' || is_control(c) {
            continue;
        }
        if is_cjk(c) {
            cleaned.push(' ');
            cleaned.push(c);
            cleaned.push(' ');
        } else if c.is_whitespace() {
            cleaned.push(' ');
        } else {
            cleaned.push(c);
        }
    }
    cleaned
        .to_lowercase()
        .nfd()
        .filter(|&c| get_general_category(c) != GeneralCategory::NonspacingMark)
        .collect()
}

/// Greedy longest-match-first segmentation of one word.
fn wordpiece_word(word: &str, vocab: &Vocab, out: &mut TokenSeq) {
    let unknown = |out: &mut TokenSeq| {
        out.ids.push(vocab.unknown);
        out.surfaces.push(vocab.tokens[vocab.unknown as usize].clone());
    };
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        unknown(out);
        return;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while start < end {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => {
                pieces.push(id);
                start = end;
            }
            None => {
                unknown(out);
                return;
            }
        }
    }
    for id in pieces {
        out.ids.push(id);
        out.surfaces.push(vocab.tokens[id as usize].clone());
    }
}

/// Normalizes (when asked), splits into words, then segments each word.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocab, normalized: bool) -> TokenSeq {
    let owned;
    let text = if normalized {
        owned = normalize(text);
        owned.as_str()
    } else {
        text
    };
    let mut out = TokenSeq::default();
    for word in split_words(text) {
        wordpiece_word(word, vocab, &mut out);
    }
    out
}

/// Inverse of WordPiece for one word: strip continuation prefixes and join.
pub fn detokenize_word(pieces: &[&str]) -> String {
    pieces
        .iter()
        .map(|p| p.strip_prefix(CONTINUATION_PREFIX).unwrap_or(p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Word,
    Wpm,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Word => "word",
            Regime::Wpm => "wpm",
        })
    }
}

impl FromStr for Regime {
    type Err = TokenizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Regime::Word),
            "wpm" => Ok(Regime::Wpm),
            other => Err(TokenizeError::UnknownRegime(other.to_string())),
        }
    }
}

/// Identifies a tokenizer configuration inside persisted artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub regime: Regime,
    pub normalize: bool,
    pub vocab_fingerprint: Option<String>,
}

#[derive(Debug, Clone)]
pub enum Tokenizer {
    Word,
    WordPiece { vocab: Arc<Vocab>, normalize: bool },
}

impl Tokenizer {
    pub fn wordpiece(vocab: Arc<Vocab>) -> Self {
        Tokenizer::WordPiece {
            vocab,
            normalize: true,
        }
    }

    pub fn from_regime(regime: Regime, vocab: Option<Arc<Vocab>>) -> Result<Self, TokenizeError> {
        match regime {
            Regime::Word => Ok(Tokenizer::Word),
            Regime::Wpm => Ok(Tokenizer::wordpiece(vocab.ok_or(TokenizeError::VocabRequired)?)),
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            Tokenizer::Word => Regime::Word,
            Tokenizer::WordPiece { .. } => Regime::Wpm,
        }
    }

    pub fn spec(&self) -> TokenizerSpec {
        match self {
            Tokenizer::Word => TokenizerSpec {
                regime: Regime::Word,
                normalize: false,
                vocab_fingerprint: None,
            },
            Tokenizer::WordPiece { vocab, normalize } => TokenizerSpec {
                regime: Regime::Wpm,
                normalize: *normalize,
                vocab_fingerprint: Some(vocab.fingerprint()),
            },
        }
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Word => word_tokenize(text),
            Tokenizer::WordPiece { vocab, normalize } => {
                wordpiece_tokenize(text, vocab, *normalize).surfaces
            }
        }
    }

    pub fn vocab_size(&self) -> Option<usize> {
        match self {
            Tokenizer::Word => None,
            Tokenizer::WordPiece { vocab, .. } => Some(vocab.len()),
        }
    }

    /// Vocabulary ids; only the WordPiece regime has them.
    pub fn ids(&self, text: &str) -> Option<Vec<u32>> {
        match self {
            Tokenizer::Word => None,
            Tokenizer::WordPiece { vocab, normalize } => {
                Some(wordpiece_tokenize(text, vocab, *normalize).ids)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> Vocab {
        let mut all: Vec<String> = tokens.iter().map(|s| s.to_string()).collect();
        all.push(DEFAULT_UNKNOWN.into());
        Vocab::new(all, DEFAULT_UNKNOWN).unwrap()
    }

    fn pieces(text: &str, v: &Vocab) -> Vec<String> {
        wordpiece_tokenize(text, v, true).surfaces
    }

    #[test]
    fn word_tokenize_examples() {
        assert_eq!(word_tokenize("Salton Sea, 1523."), ["Salton", "Sea", ",", "1523", "."]);
        assert_eq!(word_tokenize("don't"), ["don", "'", "t"]);
        assert!(word_tokenize("").is_empty());
        assert_eq!(word_tokenize("a$b «c»"), ["a", "$", "b", "«", "c", "»"]);
        assert_eq!(word_tokenize("Résumé"), ["Résumé"]);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Résumé"), "resume");
        assert_eq!(normalize("ABC"), "abc");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("a\u{200B}b\u{0007}c"), "abc");
        assert_eq!(normalize("x中y"), "x 中 y");
        assert_eq!(normalize("tab\there"), "tab here");
    }

    #[test]
    fn wordpiece_examples() {
        let v = vocab(&["un", "##aff", "##able", "aff"]);
        assert_eq!(pieces("unaffable", &v), ["un", "##aff", "##able"]);
        let v = vocab(&["a"]);
        assert_eq!(pieces("xyz", &v), [DEFAULT_UNKNOWN]);
        let v = vocab(&["ab", "a", "##b"]);
        assert_eq!(pieces("ab", &v), ["ab"]);
    }

    #[test]
    fn partial_match_becomes_unknown() {
        let v = vocab(&["un", "##aff"]);
        assert_eq!(pieces("unaffable", &v), [DEFAULT_UNKNOWN]);
    }

    #[test]
    fn overlong_word_is_unknown() {
        let v = vocab(&["a", "##a"]);
        assert_eq!(pieces(&"a".repeat(200), &v).len(), 200);
        assert_eq!(pieces(&"a".repeat(201), &v), [DEFAULT_UNKNOWN]);
    }

    #[test]
    fn normalization_toggle() {
        let v = vocab(&["hello", "Hello", ","]);
        assert_eq!(pieces("Hello, hello", &v), ["hello", ",", "hello"]);
        assert_eq!(
            wordpiece_tokenize("Hello, hello", &v, false).surfaces,
            ["Hello", ",", "hello"]
        );
    }

    #[test]
    fn vocab_errors() {
        assert!(matches!(Vocab::new(vec![], DEFAULT_UNKNOWN), Err(TokenizeError::EmptyVocab)));
        assert!(matches!(
            Vocab::from_text("a\nb\n"),
            Err(TokenizeError::MissingUnknown(_))
        ));
        assert!(matches!(
            Vocab::from_text("a\n[UNK]\na\n"),
            Err(TokenizeError::DuplicateToken { line: 3, .. })
        ));
        let v = Vocab::from_text("[PAD]\n[UNK]\nthe\n##s\n").unwrap();
        assert_eq!(v.id("the"), Some(2));
        assert_eq!(v.unknown_id(), 1);
    }

    proptest! {
        #[test]
        fn word_tokenize_preserves_characters(text in "\\PC{0,40}") {
            let joined: String = word_tokenize(&text).concat();
            let expected: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, expected);
        }

        #[test]
        fn detokenize_reproduces_normalized_word(word in "[a-d]{1,12}") {
            let mut toks = vec![DEFAULT_UNKNOWN.to_string()];
            for a in ['a', 'b', 'c', 'd'] {
                toks.push(a.to_string());
                toks.push(format!("##{a}"));
            }
            toks.push("abc".into());
            toks.push("##cd".into());
            let v = Vocab::new(toks, DEFAULT_UNKNOWN).unwrap();
            let seq = wordpiece_tokenize(&word, &v, true);
            let parts: Vec<&str> = seq.surfaces.iter().map(String::as_str).collect();
            prop_assert_eq!(detokenize_word(&parts), word);
        }
    }
}
