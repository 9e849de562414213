#ifndef FAIRAUDIT_H
#define FAIRAUDIT_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FaStatus {
  FA_STATUS_OK = 0,
  FA_STATUS_NULL_POINTER = 1,
  FA_STATUS_INVALID_ARGUMENT = 2,
  FA_STATUS_DIMENSION_MISMATCH = 3,
  FA_STATUS_IO = 4,
  FA_STATUS_PARSE = 5,
  /**
   * A group or (group, label) cell has no instances.
   */
  FA_STATUS_DEGENERATE = 6,
  FA_STATUS_ID_MISMATCH = 7,
  FA_STATUS_MISSING_ARTIFACT = 8,
  FA_STATUS_PANIC = 9,
  FA_STATUS_INTERNAL = 10,
} FaStatus;

/**
 * Instances whose label differs between two prediction sets.
 */
typedef struct FaDelta FaDelta;

/**
 * A trained biased or fair model loaded from a model file.
 */
typedef struct FaModel FaModel;

/**
 * Scores and hard labels for a set of instances.
 */
typedef struct FaPredictions FaPredictions;

/**
 * Accuracy and group fairness of one prediction set. Group 1 is the
 * privileged group; differences are group 1 minus group 0.
 */
typedef struct FaFairnessScores {
  double accuracy;
  double positive_rate_s0;
  double positive_rate_s1;
  double p_rule;
  double tpr_s0;
  double tpr_s1;
  double fpr_s0;
  double fpr_s1;
  double d_tpr;
  double d_fpr;
} FaFairnessScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. The string stays valid
 * until the next failing call on the same thread.
 */
const char *fa_last_error_message(void);

/**
 * Build a prediction set; labels are `score > threshold`.
 *
 * # Safety
 * `ids` and `scores` must point to `n` values; `out` must be writable.
 */
enum FaStatus fa_predictions_from_scores(const uint64_t *ids,
                                         const double *scores,
                                         size_t n,
                                         double threshold,
                                         struct FaPredictions **out);

/**
 * # Safety
 * `preds` must be null or a live handle.
 */
size_t fa_predictions_len(const struct FaPredictions *preds);

/**
 * Copy the hard labels into `out`, which must hold exactly `n` values.
 *
 * # Safety
 * `preds` must be a live handle; `out` must be writable for `n` bytes.
 */
enum FaStatus fa_predictions_labels(const struct FaPredictions *preds, uint8_t *out, size_t n);

/**
 * # Safety
 * `preds` must be null or a handle not freed before.
 */
void fa_predictions_free(struct FaPredictions *preds);

/**
 * Load a model file written by the `fairaudit` pipeline.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FaStatus fa_model_load(const char *path, struct FaModel **out);

/**
 * Hex fingerprint of the classifier parameters; owned by the handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *fa_model_fingerprint(const struct FaModel *model);

/**
 * Score a row-major `rows × cols` feature matrix (already standardized
 * like the training data).
 *
 * # Safety
 * `x` must hold `rows * cols` values, `ids` `rows` values; `out` must be
 * writable.
 */
enum FaStatus fa_model_predict(const struct FaModel *model,
                               const double *x,
                               size_t rows,
                               size_t cols,
                               const uint64_t *ids,
                               double threshold,
                               struct FaPredictions **out);

/**
 * # Safety
 * `model` must be null or a handle not freed before.
 */
void fa_model_free(struct FaModel *model);

/**
 * Accuracy, positive rates, p%-rule and error-rate gaps.
 *
 * # Safety
 * `y` and `s` must hold `n` values (0 or 1); `out` must be writable.
 */
enum FaStatus fa_fairness_scores(const struct FaPredictions *preds,
                                 const uint8_t *y,
                                 const uint8_t *s,
                                 size_t n,
                                 struct FaFairnessScores *out);

/**
 * Instances whose label differs between the biased predictions `f` and
 * the fair predictions `g`; both must cover the same ids in the same
 * order.
 *
 * # Safety
 * `f`, `g` must be live handles; `s` must hold `n` values; `out` must be
 * writable.
 */
enum FaStatus fa_delta_compute(const struct FaPredictions *f,
                               const struct FaPredictions *g,
                               const uint8_t *s,
                               size_t n,
                               struct FaDelta **out);

/**
 * # Safety
 * `delta` must be null or a live handle.
 */
size_t fa_delta_len(const struct FaDelta *delta);

/**
 * Copy the changed ids, ascending, into `out` (exactly `n` slots).
 *
 * # Safety
 * `delta` must be a live handle; `out` must be writable for `n` values.
 */
enum FaStatus fa_delta_ids(const struct FaDelta *delta, uint64_t *out, size_t n);

/**
 * |Δ| / n.
 *
 * # Safety
 * `delta` must be a live handle; `out` must be writable.
 */
enum FaStatus fa_delta_impact_fraction(const struct FaDelta *delta, double *out);

/**
 * Changed-instance counts as `[positive s=0, positive s=1, negative s=0,
 * negative s=1]`; positive means 0 → 1.
 *
 * # Safety
 * `delta` must be a live handle; `out` must be writable for 4 values.
 */
enum FaStatus fa_delta_direction_counts(const struct FaDelta *delta, size_t *out);

/**
 * # Safety
 * `delta` must be null or a handle not freed before.
 */
void fa_delta_free(struct FaDelta *delta);

/**
 * Intersection over union of two or more Δ-sets over the same instances.
 * When every set is empty the value is 1 and `degenerate` is set.
 *
 * # Safety
 * `deltas` must hold `count` live handles; the outputs must be writable.
 */
enum FaStatus fa_iou(const struct FaDelta *const *deltas,
                     size_t count,
                     double *value,
                     bool *degenerate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRAUDIT_H */
