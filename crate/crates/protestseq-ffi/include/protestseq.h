/* C interface to the protest text models. Generated; do not edit. */

#ifndef PROTESTSEQ_H
#define PROTESTSEQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PsqStatus {
  PsqOk = 0,
  /**
   * A required pointer argument was NULL.
   */
  PsqNullArgument = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PsqInvalidUtf8 = 2,
  /**
   * A file could not be read.
   */
  PsqIoError = 3,
  /**
   * The checkpoint or vector file exists but could not be used.
   */
  PsqBadModel = 4,
  /**
   * The operation needs the other architecture.
   */
  PsqWrongArchitecture = 5,
  /**
   * The input had no tokens.
   */
  PsqEmptyInput = 6,
  /**
   * An internal invariant failed; the handle is still usable.
   */
  PsqInternalError = 7,
} PsqStatus;

/**
 * A loaded model plus its embedder; opaque to C.
 */
typedef struct PsqPipeline PsqPipeline;

/**
 * Scores from the two sigmoid heads, labels already thresholded.
 */
typedef struct PsqClassScores {
  double p_doc;
  double p_sent;
  uint8_t label_doc;
  uint8_t label_sent;
} PsqClassScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *psq_version(void);

/**
 * Message for the calling thread's most recent failure; empty string when
 * nothing failed yet. The pointer stays valid until this thread's next
 * failing call.
 */
const char *psq_last_error(void);

/**
 * Opens a checkpoint, optionally with a pretrained vector table
 * (`vectors_path` may be NULL to embed every token by the checkpoint's
 * out-of-vocabulary policy). On success `*out` owns the pipeline; release
 * it with `psq_pipeline_close`.
 *
 * # Safety
 * `model_path` must be a NUL-terminated path; `vectors_path` NULL or the
 * same; `out` must point to writable storage for one pointer.
 */
enum PsqStatus psq_pipeline_open(const char *model_path,
                                 const char *vectors_path,
                                 struct PsqPipeline **out);

/**
 * Releases a pipeline. NULL is a no-op.
 *
 * # Safety
 * `pipeline` must be NULL or a pointer from `psq_pipeline_open` not yet
 * closed.
 */
void psq_pipeline_close(struct PsqPipeline *pipeline);

/**
 * Architecture of the loaded model: `"classifier"` or `"tagger"` (static
 * strings). NULL input yields `"unknown"`.
 *
 * # Safety
 * `pipeline` must be NULL or a live pipeline pointer.
 */
const char *psq_pipeline_kind(const struct PsqPipeline *pipeline);

/**
 * Scores one text with both heads. Works for either architecture.
 *
 * # Safety
 * `pipeline` must be live, `text` NUL-terminated, `out` writable.
 */
enum PsqStatus psq_classify_text(const struct PsqPipeline *pipeline,
                                 const char *text,
                                 struct PsqClassScores *out);

/**
 * Tags `n_tokens` tokens (tagger checkpoints only). `entities` may be NULL
 * for no entity features, or an array of `n_tokens` label strings. On
 * success `*out_tags` is an array of `n_tokens` NUL-terminated tag strings;
 * release it with `psq_tags_free(tags, n_tokens)`.
 *
 * # Safety
 * `tokens` (and `entities` when non-NULL) must hold `n_tokens` valid
 * NUL-terminated strings; `out_tags` must be writable.
 */
enum PsqStatus psq_tag_tokens(const struct PsqPipeline *pipeline,
                              const char *const *tokens,
                              uintptr_t n_tokens,
                              const char *const *entities,
                              char ***out_tags);

/**
 * Frees an array returned by `psq_tag_tokens`. NULL is a no-op; `n_tokens`
 * must be the count passed to the call that produced it.
 *
 * # Safety
 * `tags` must be NULL or an unreleased `psq_tag_tokens` result.
 */
void psq_tags_free(char **tags, uintptr_t n_tokens);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROTESTSEQ_H */
