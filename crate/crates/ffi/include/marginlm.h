#ifndef MARGINLM_H
#define MARGINLM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MlmStatus {
  MLM_STATUS_OK = 0,
  MLM_STATUS_NULL_POINTER = 1,
  MLM_STATUS_INVALID_UTF8 = 2,
  MLM_STATUS_INVALID_ARGUMENT = 3,
  MLM_STATUS_IO = 4,
  MLM_STATUS_FORMAT = 5,
  MLM_STATUS_CHECKPOINT = 6,
  MLM_STATUS_NUMERIC = 7,
  MLM_STATUS_PANIC = 8,
} MlmStatus;

/**
 * A loaded model and its vocabulary.
 */
typedef struct MlmModel MlmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Owned by the
 * library; valid until the next call on this thread.
 */
const char *mlm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mlm_version(void);

/**
 * Loads a checkpoint. On success `*out` holds a handle to free with
 * `mlm_model_free`; on failure it is set to null.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MlmStatus mlm_model_load(const char *path, struct MlmModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from `mlm_model_load` not yet freed.
 */
void mlm_model_free(struct MlmModel *model);

/**
 * Vocabulary size including the reserved tokens.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum MlmStatus mlm_model_vocab_size(const struct MlmModel *model, uintptr_t *out);

/**
 * Natural-log probability of a sentence including the end token.
 *
 * # Safety
 * `model` must be a live handle, `sentence` NUL-terminated, `out` valid.
 */
enum MlmStatus mlm_lm_score(const struct MlmModel *model, const char *sentence, double *out);

/**
 * Perplexity over a corpus file with one sentence per line.
 *
 * # Safety
 * `model` must be a live handle, `corpus_path` NUL-terminated, `out` valid.
 */
enum MlmStatus mlm_perplexity(const struct MlmModel *model, const char *corpus_path, double *out);

/**
 * Word error rate of `hypothesis` against a non-empty `reference`.
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` valid.
 */
enum MlmStatus mlm_wer(const char *reference, const char *hypothesis, double *out);

/**
 * Smoothed sentence BLEU in [0, 1] against a single reference.
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` valid.
 */
enum MlmStatus mlm_sentence_bleu(const char *reference, const char *hypothesis, double *out);

/**
 * Reranks an n-best JSONL file by task score plus `weight` times the LM
 * score (per token if `length_norm` is nonzero) and writes the result.
 *
 * # Safety
 * `model` must be a live handle and both paths NUL-terminated.
 */
enum MlmStatus mlm_rescore_file(const struct MlmModel *model,
                                const char *in_path,
                                const char *out_path,
                                double weight,
                                int length_norm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARGINLM_H */
