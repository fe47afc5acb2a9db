//! C ABI for the reqa toolkit.
//!
//! Every fallible function returns a [`ReqaStatus`]; on failure a message is
//! available from [`reqa_last_error_message`] on the same thread. Handles are
//! opaque, created by `*_load` / `*_build` and released by the matching
//! `*_free`. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use reqa::bm25::{Bm25Params, Bm25Retriever};
use reqa::corpus::{CandidatePool, QuestionSet, RetrievalRun};
use reqa::eval::{self, ReportMeta};
use reqa::retrieve::{build_run, RunShape};
use reqa::segmenter::split_sentences;
use reqa::tokenize::{Tokenizer, Vocab};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReqaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    Empty = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

pub const REQA_TOKENIZER_WORD: u32 = 0;
pub const REQA_TOKENIZER_WPM: u32 = 1;

/// Candidate pool.
pub struct ReqaPool(CandidatePool);

/// Question set with gold ids.
pub struct ReqaQuestions(QuestionSet);

/// BM25 retriever over a pool.
pub struct ReqaBm25(Bm25Retriever);

/// Ranked lists for a question set.
pub struct ReqaRun(RetrievalRun);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReqaBm25Params {
    pub k1: f64,
    pub b: f64,
    pub epsilon: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReqaHit {
    pub id: u32,
    pub score: f64,
}

/// P@1 and MRR as percentages.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReqaMetrics {
    pub n_questions: usize,
    pub p_at_1: f64,
    pub mrr: f64,
}

/// Half-open byte range `[start, end)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReqaSpan {
    pub start: usize,
    pub end: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ReqaStatus, String);

impl Failure {
    fn new(status: ReqaStatus, message: impl Into<String>) -> Self {
        Self(status, message.into())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> ReqaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ReqaStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal error: panic inside reqa".into());
            ReqaStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::new(ReqaStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(ReqaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure::new(ReqaStatus::NullArgument, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> FfiResult<()> {
    if p.is_null() {
        Err(Failure::new(ReqaStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn open(path: &str) -> FfiResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::new(ReqaStatus::Io, format!("{path}: {e}")))
}

fn parse_error(e: impl std::fmt::Display) -> Failure {
    Failure::new(ReqaStatus::Parse, e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::new(ReqaStatus::InvalidArgument, e.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn reqa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next reqa call on this thread.
#[no_mangle]
pub extern "C" fn reqa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a candidate pool from JSON Lines.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reqa_pool_load(path: *const c_char, out: *mut *mut ReqaPool) -> ReqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let pool = CandidatePool::read_jsonl(open(path)?).map_err(parse_error)?;
        *out = Box::into_raw(Box::new(ReqaPool(pool)));
        Ok(())
    })
}

/// Number of candidates; 0 for NULL.
///
/// # Safety
/// `pool` must be NULL or a live handle from [`reqa_pool_load`].
#[no_mangle]
pub unsafe extern "C" fn reqa_pool_len(pool: *const ReqaPool) -> usize {
    pool.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `pool` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reqa_pool_free(pool: *mut ReqaPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Loads questions and checks every gold id against `pool`.
///
/// # Safety
/// `path` must be a valid string, `pool` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn reqa_questions_load(
    path: *const c_char,
    pool: *const ReqaPool,
    out: *mut *mut ReqaQuestions,
) -> ReqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let pool = ref_arg(pool, "pool")?;
        let qs = QuestionSet::read_jsonl(open(path)?, &pool.0).map_err(parse_error)?;
        *out = Box::into_raw(Box::new(ReqaQuestions(qs)));
        Ok(())
    })
}

/// Number of questions; 0 for NULL.
///
/// # Safety
/// `questions` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn reqa_questions_len(questions: *const ReqaQuestions) -> usize {
    questions.as_ref().map_or(0, |q| q.0.len())
}

/// # Safety
/// `questions` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reqa_questions_free(questions: *mut ReqaQuestions) {
    if !questions.is_null() {
        drop(Box::from_raw(questions));
    }
}

/// k1 = 1.5, b = 0.75, epsilon = 0.25.
#[no_mangle]
pub extern "C" fn reqa_bm25_default_params() -> ReqaBm25Params {
    let p = Bm25Params::default();
    ReqaBm25Params {
        k1: p.k1,
        b: p.b,
        epsilon: p.epsilon,
    }
}

/// Builds a BM25 index over `pool`. `tokenizer` is `REQA_TOKENIZER_WORD` or
/// `REQA_TOKENIZER_WPM`; the latter needs `vocab_path`. `params` may be NULL
/// for the defaults.
///
/// # Safety
/// Pointers must be NULL where allowed or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reqa_bm25_build(
    pool: *const ReqaPool,
    params: *const ReqaBm25Params,
    tokenizer: u32,
    vocab_path: *const c_char,
    use_context: bool,
    out: *mut *mut ReqaBm25,
) -> ReqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let pool = ref_arg(pool, "pool")?;
        let params = params.as_ref().map_or_else(Bm25Params::default, |p| Bm25Params {
            k1: p.k1,
            b: p.b,
            epsilon: p.epsilon,
        });
        let tokenizer = match tokenizer {
            REQA_TOKENIZER_WORD => Tokenizer::Word,
            REQA_TOKENIZER_WPM => {
                let path = str_arg(vocab_path, "vocab_path")?;
                let vocab = Vocab::from_file(PathBuf::from(path)).map_err(parse_error)?;
                Tokenizer::wordpiece(Arc::new(vocab))
            }
            other => return Err(invalid(format!("unknown tokenizer {other}"))),
        };
        if pool.0.is_empty() {
            return Err(Failure::new(ReqaStatus::Empty, "candidate pool is empty"));
        }
        let retriever = Bm25Retriever::build(&pool.0, tokenizer, params, use_context).map_err(invalid)?;
        *out = Box::into_raw(Box::new(ReqaBm25(retriever)));
        Ok(())
    })
}

/// Top `k` candidates for `query`, best first. Writes `min(k, pool size)`
/// hits to `hits` and their count to `n_hits`; fails with
/// `BufferTooSmall` (still setting `n_hits`) when `capacity` is short.
///
/// # Safety
/// `hits` must have room for `capacity` entries; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn reqa_bm25_search(
    index: *const ReqaBm25,
    query: *const c_char,
    k: usize,
    hits: *mut ReqaHit,
    capacity: usize,
    n_hits: *mut usize,
) -> ReqaStatus {
    guard(|| {
        out_arg(n_hits, "n_hits")?;
        let index = ref_arg(index, "index")?;
        let query = str_arg(query, "query")?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let found = index.0.retrieve(query, k).map_err(invalid)?;
        *n_hits = found.len();
        if capacity < found.len() {
            return Err(Failure::new(
                ReqaStatus::BufferTooSmall,
                format!("{} hits, buffer holds {capacity}", found.len()),
            ));
        }
        out_arg(hits, "hits")?;
        for (i, c) in found.iter().enumerate() {
            *hits.add(i) = ReqaHit {
                id: c.id,
                score: c.score,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `index` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reqa_bm25_free(index: *mut ReqaBm25) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Ranks the full pool for every question. `system_name` may be NULL.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reqa_bm25_run(
    index: *const ReqaBm25,
    questions: *const ReqaQuestions,
    system_name: *const c_char,
    out: *mut *mut ReqaRun,
) -> ReqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let index = ref_arg(index, "index")?;
        let questions = ref_arg(questions, "questions")?;
        let name = if system_name.is_null() {
            "bm25"
        } else {
            str_arg(system_name, "system_name")?
        };
        let run = build_run(name, &questions.0, RunShape::FULL, |q| {
            Ok::<_, reqa::corpus::CorpusError>(index.0.scores(&q.text))
        })
        .map_err(invalid)?;
        *out = Box::into_raw(Box::new(ReqaRun(run)));
        Ok(())
    })
}

/// Loads a run file written by `reqa retrieve` or [`reqa_run_write`].
///
/// # Safety
/// `path` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reqa_run_load(path: *const c_char, out: *mut *mut ReqaRun) -> ReqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let run = RetrievalRun::read_jsonl(open(path)?).map_err(parse_error)?;
        *out = Box::into_raw(Box::new(ReqaRun(run)));
        Ok(())
    })
}

/// Writes `run` as JSON Lines, replacing any existing file.
///
/// # Safety
/// `run` must be a live handle; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn reqa_run_write(run: *const ReqaRun, path: *const c_char) -> ReqaStatus {
    guard(|| {
        let run = ref_arg(run, "run")?;
        let path = str_arg(path, "path")?;
        let io = |e: std::io::Error| Failure::new(ReqaStatus::Io, format!("{path}: {e}"));
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        run.0
            .write_jsonl(&mut w)
            .map_err(|e| Failure::new(ReqaStatus::Io, e.to_string()))?;
        w.flush().map_err(io)
    })
}

/// # Safety
/// `run` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reqa_run_free(run: *mut ReqaRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// P@1 and MRR of `run` against `questions`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn reqa_eval(
    run: *const ReqaRun,
    questions: *const ReqaQuestions,
    out: *mut ReqaMetrics,
) -> ReqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let run = ref_arg(run, "run")?;
        let questions = ref_arg(questions, "questions")?;
        let report = eval::evaluate(&run.0, &questions.0, ReportMeta::default()).map_err(invalid)?;
        *out = ReqaMetrics {
            n_questions: report.n_questions,
            p_at_1: report.p_at_1,
            mrr: report.mrr,
        };
        Ok(())
    })
}

/// Sentence boundaries of `text` as byte ranges. Sets `n_spans` to the
/// sentence count and fails with `BufferTooSmall` when `capacity` is short.
///
/// # Safety
/// `spans` must have room for `capacity` entries; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn reqa_split_sentences(
    text: *const c_char,
    spans: *mut ReqaSpan,
    capacity: usize,
    n_spans: *mut usize,
) -> ReqaStatus {
    guard(|| {
        out_arg(n_spans, "n_spans")?;
        let text = str_arg(text, "text")?;
        let mut byte_at: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        byte_at.push(text.len());
        let found = split_sentences(text);
        *n_spans = found.len();
        if capacity < found.len() {
            return Err(Failure::new(
                ReqaStatus::BufferTooSmall,
                format!("{} sentences, buffer holds {capacity}", found.len()),
            ));
        }
        out_arg(spans, "spans")?;
        for (i, s) in found.iter().enumerate() {
            *spans.add(i) = ReqaSpan {
                start: byte_at[s.start],
                end: byte_at[s.end],
            };
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        let p = reqa_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn version_is_crate_version() {
        let v = unsafe { CStr::from_ptr(reqa_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut pool = ptr::null_mut();
        let st = unsafe { reqa_pool_load(ptr::null(), &mut pool) };
        assert_eq!(st, ReqaStatus::NullArgument);
        assert!(last_error().contains("path"));
        assert!(pool.is_null());
        let path = cstr("x");
        assert_eq!(unsafe { reqa_pool_load(path.as_ptr(), ptr::null_mut()) }, ReqaStatus::NullArgument);
        assert_eq!(unsafe { reqa_pool_len(ptr::null()) }, 0);
        unsafe { reqa_pool_free(ptr::null_mut()) };
    }

    #[test]
    fn missing_file_is_io_error() {
        let mut pool = ptr::null_mut();
        let path = cstr("/nonexistent/reqa/pool.jsonl");
        assert_eq!(unsafe { reqa_pool_load(path.as_ptr(), &mut pool) }, ReqaStatus::Io);
        assert!(last_error().contains("pool.jsonl"));
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let bytes = [0xffu8, 0xfe, 0];
        let mut n = 0;
        let st = unsafe { reqa_split_sentences(bytes.as_ptr().cast(), ptr::null_mut(), 0, &mut n) };
        assert_eq!(st, ReqaStatus::InvalidUtf8);
    }

    #[test]
    fn split_reports_byte_offsets_and_buffer_size() {
        let text = cstr("Café opened. It closed!");
        let mut n = 0;
        let st = unsafe { reqa_split_sentences(text.as_ptr(), ptr::null_mut(), 0, &mut n) };
        assert_eq!(st, ReqaStatus::BufferTooSmall);
        assert_eq!(n, 2);
        let mut spans = vec![ReqaSpan { start: 0, end: 0 }; n];
        let st = unsafe { reqa_split_sentences(text.as_ptr(), spans.as_mut_ptr(), spans.len(), &mut n) };
        assert_eq!(st, ReqaStatus::Ok);
        assert!(reqa_last_error_message().is_null());
        let s = text.to_str().unwrap();
        assert_eq!(&s[spans[0].start..spans[0].end], "Café opened.");
        assert_eq!(&s[spans[1].start..spans[1].end], "It closed!");
    }

    #[test]
    fn default_params() {
        let p = reqa_bm25_default_params();
        assert_eq!((p.k1, p.b, p.epsilon), (1.5, 0.75, 0.25));
    }
}
