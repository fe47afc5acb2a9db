/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef REQA_H
#define REQA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define REQA_TOKENIZER_WORD 0

#define REQA_TOKENIZER_WPM 1

/**
 * Result code of every fallible call.
 */
typedef enum ReqaStatus {
  REQA_STATUS_OK = 0,
  REQA_STATUS_NULL_ARGUMENT = 1,
  REQA_STATUS_INVALID_UTF8 = 2,
  REQA_STATUS_IO = 3,
  REQA_STATUS_PARSE = 4,
  REQA_STATUS_INVALID_ARGUMENT = 5,
  REQA_STATUS_EMPTY = 6,
  REQA_STATUS_BUFFER_TOO_SMALL = 7,
  REQA_STATUS_INTERNAL = 8,
} ReqaStatus;

/**
 * BM25 retriever over a pool.
 */
typedef struct ReqaBm25 ReqaBm25;

/**
 * Candidate pool.
 */
typedef struct ReqaPool ReqaPool;

/**
 * Question set with gold ids.
 */
typedef struct ReqaQuestions ReqaQuestions;

/**
 * Ranked lists for a question set.
 */
typedef struct ReqaRun ReqaRun;

typedef struct ReqaBm25Params {
  double k1;
  double b;
  double epsilon;
} ReqaBm25Params;

typedef struct ReqaHit {
  uint32_t id;
  double score;
} ReqaHit;

/**
 * P@1 and MRR as percentages.
 */
typedef struct ReqaMetrics {
  size_t n_questions;
  double p_at_1;
  double mrr;
} ReqaMetrics;

/**
 * Half-open byte range `[start, end)`.
 */
typedef struct ReqaSpan {
  size_t start;
  size_t end;
} ReqaSpan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *reqa_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next reqa call on this thread.
 */
const char *reqa_last_error_message(void);

/**
 * Loads a candidate pool from JSON Lines.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be writable.
 */
enum ReqaStatus reqa_pool_load(const char *path, struct ReqaPool **out);

/**
 * Number of candidates; 0 for NULL.
 *
 * # Safety
 * `pool` must be NULL or a live handle from [`reqa_pool_load`].
 */
size_t reqa_pool_len(const struct ReqaPool *pool);

/**
 * # Safety
 * `pool` must be NULL or a live handle that is not used afterwards.
 */
void reqa_pool_free(struct ReqaPool *pool);

/**
 * Loads questions and checks every gold id against `pool`.
 *
 * # Safety
 * `path` must be a valid string, `pool` a live handle, `out` writable.
 */
enum ReqaStatus reqa_questions_load(const char *path,
                                    const struct ReqaPool *pool,
                                    struct ReqaQuestions **out);

/**
 * Number of questions; 0 for NULL.
 *
 * # Safety
 * `questions` must be NULL or a live handle.
 */
size_t reqa_questions_len(const struct ReqaQuestions *questions);

/**
 * # Safety
 * `questions` must be NULL or a live handle that is not used afterwards.
 */
void reqa_questions_free(struct ReqaQuestions *questions);

/**
 * k1 = 1.5, b = 0.75, epsilon = 0.25.
 */
struct ReqaBm25Params reqa_bm25_default_params(void);

/**
 * Builds a BM25 index over `pool`. `tokenizer` is `REQA_TOKENIZER_WORD` or
 * `REQA_TOKENIZER_WPM`; the latter needs `vocab_path`. `params` may be NULL
 * for the defaults.
 *
 * # Safety
 * Pointers must be NULL where allowed or valid; `out` must be writable.
 */
enum ReqaStatus reqa_bm25_build(const struct ReqaPool *pool,
                                const struct ReqaBm25Params *params,
                                uint32_t tokenizer,
                                const char *vocab_path,
                                bool use_context,
                                struct ReqaBm25 **out);

/**
 * Top `k` candidates for `query`, best first. Writes `min(k, pool size)`
 * hits to `hits` and their count to `n_hits`; fails with
 * `BufferTooSmall` (still setting `n_hits`) when `capacity` is short.
 *
 * # Safety
 * `hits` must have room for `capacity` entries; other pointers valid.
 */
enum ReqaStatus reqa_bm25_search(const struct ReqaBm25 *index,
                                 const char *query,
                                 size_t k,
                                 struct ReqaHit *hits,
                                 size_t capacity,
                                 size_t *n_hits);

/**
 * # Safety
 * `index` must be NULL or a live handle that is not used afterwards.
 */
void reqa_bm25_free(struct ReqaBm25 *index);

/**
 * Ranks the full pool for every question. `system_name` may be NULL.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum ReqaStatus reqa_bm25_run(const struct ReqaBm25 *index,
                              const struct ReqaQuestions *questions,
                              const char *system_name,
                              struct ReqaRun **out);

/**
 * Loads a run file written by `reqa retrieve` or [`reqa_run_write`].
 *
 * # Safety
 * `path` must be a valid string; `out` must be writable.
 */
enum ReqaStatus reqa_run_load(const char *path, struct ReqaRun **out);

/**
 * Writes `run` as JSON Lines, replacing any existing file.
 *
 * # Safety
 * `run` must be a live handle; `path` a valid string.
 */
enum ReqaStatus reqa_run_write(const struct ReqaRun *run, const char *path);

/**
 * # Safety
 * `run` must be NULL or a live handle that is not used afterwards.
 */
void reqa_run_free(struct ReqaRun *run);

/**
 * P@1 and MRR of `run` against `questions`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum ReqaStatus reqa_eval(const struct ReqaRun *run,
                          const struct ReqaQuestions *questions,
                          struct ReqaMetrics *out);

/**
 * Sentence boundaries of `text` as byte ranges. Sets `n_spans` to the
 * sentence count and fails with `BufferTooSmall` when `capacity` is short.
 *
 * # Safety
 * `spans` must have room for `capacity` entries; other pointers valid.
 */
enum ReqaStatus reqa_split_sentences(const char *text,
                                     struct ReqaSpan *spans,
                                     size_t capacity,
                                     size_t *n_spans);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REQA_H */
