#ifndef FREQATTN_H
#define FREQATTN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FaStatus {
  FA_STATUS_OK = 0,
  FA_STATUS_NULL_POINTER = 1,
  FA_STATUS_INVALID_ARGUMENT = 2,
  FA_STATUS_DIMENSION = 3,
  FA_STATUS_INDEX = 4,
  FA_STATUS_CAPACITY = 5,
  FA_STATUS_CONFIG = 6,
  FA_STATUS_NUMERIC = 7,
  FA_STATUS_FORMAT = 8,
  FA_STATUS_PARSE = 9,
  FA_STATUS_INPUT = 10,
  FA_STATUS_STATE = 11,
  FA_STATUS_IO = 12,
  FA_STATUS_PANIC = 13,
} FaStatus;

typedef enum FaVariant {
  FA_VARIANT_SE = 0,
  FA_VARIANT_SFSC = 1,
  FA_VARIANT_MFSC = 2,
} FaVariant;

typedef enum FaAggregation {
  FA_AGGREGATION_AVG = 0,
  FA_AGGREGATION_MAX = 1,
  FA_AGGREGATION_AVG_MAX = 2,
} FaAggregation;

/**
 * One attention block with seeded weights.
 */
typedef struct FaAttention FaAttention;

/**
 * Log-mel feature matrix, `n_mels × frames`, row-major.
 */
typedef struct FaFeatures FaFeatures;

/**
 * Trained network loaded from a checkpoint.
 */
typedef struct FaModel FaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or "" if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *fa_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fa_version(void);

/**
 * Runs the DCT property checks. `FA_STATUS_OK` when all of them hold.
 */
enum FaStatus fa_verify_dct(void);

/**
 * Loads a checkpoint written by `freqattn train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FaStatus fa_model_load(const char *path, struct FaModel **out);

/**
 * # Safety
 * `model` must come from [`fa_model_load`] and not be freed twice.
 */
void fa_model_free(struct FaModel *model);

/**
 * Embedding length, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t fa_model_embedding_dim(const struct FaModel *model);

/**
 * Embeds a raw log-mel matrix (`n_mels × frames`, row-major); normalization
 * is applied inside. `out` must hold `fa_model_embedding_dim` values.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum FaStatus fa_model_embed(const struct FaModel *model,
                             const double *features,
                             size_t n_mels,
                             size_t frames,
                             double *out,
                             size_t out_len);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must hold `len` values; `out` must be writable.
 */
enum FaStatus fa_cosine_score(const double *a, const double *b, size_t len, double *out);

/**
 * EER (fraction) and minDCF at p_target 0.05 for `n` scores; a nonzero
 * label marks a target trial.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; outputs must be writable.
 */
enum FaStatus fa_compute_metrics(const double *scores,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *eer,
                                 double *min_dcf);

/**
 * Log-mel features of mono samples in `[-1, 1]` with the default front end
 * (64 mels, 25 ms frames, 10 ms shift, 512-point FFT).
 *
 * # Safety
 * `samples` must hold `n` values; `out` must be writable.
 */
enum FaStatus fa_extract_features(const double *samples,
                                  size_t n,
                                  uint32_t sample_rate,
                                  struct FaFeatures **out);

/**
 * # Safety
 * `features` must be a live handle; outputs must be writable.
 */
enum FaStatus fa_features_shape(const struct FaFeatures *features, size_t *n_mels, size_t *frames);

/**
 * Row-major values, valid while the handle lives. NULL for a NULL handle.
 *
 * # Safety
 * `features` must be NULL or a live handle.
 */
const double *fa_features_data(const struct FaFeatures *features);

/**
 * # Safety
 * `features` must come from [`fa_extract_features`] and not be freed twice.
 */
void fa_features_free(struct FaFeatures *features);

/**
 * Builds an attention block for `channels` channels whose frequency
 * components are the `k` lowest of a `rows × cols` map. `k` is ignored for
 * SE. Weights are drawn from `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FaStatus fa_attention_new(enum FaVariant variant,
                               enum FaAggregation aggregation,
                               size_t channels,
                               size_t reduction,
                               size_t k,
                               size_t rows,
                               size_t cols,
                               uint64_t seed,
                               struct FaAttention **out);

/**
 * Trainable parameter count of the block, 0 for NULL.
 *
 * # Safety
 * `block` must be NULL or a live handle.
 */
size_t fa_attention_param_count(const struct FaAttention *block);

/**
 * Applies the block to `x[C×F×T]`. Writes the `C` channel weights to
 * `scale` and the rescaled map to `y`; either output may be NULL.
 *
 * # Safety
 * `x` must hold `c·f·t` values, `scale` `c` values and `y` `c·f·t` values.
 */
enum FaStatus fa_attention_forward(const struct FaAttention *block,
                                   const double *x,
                                   size_t c,
                                   size_t f,
                                   size_t t,
                                   double *scale,
                                   double *y);

/**
 * # Safety
 * `block` must come from [`fa_attention_new`] and not be freed twice.
 */
void fa_attention_free(struct FaAttention *block);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FREQATTN_H */
