#ifndef VIDSEG_H
#define VIDSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum VidsegStatus {
  VIDSEG_STATUS_OK = 0,
  VIDSEG_STATUS_NULL_ARGUMENT = 1,
  VIDSEG_STATUS_INVALID_UTF8 = 2,
  VIDSEG_STATUS_LOAD_FAILED = 3,
  VIDSEG_STATUS_BAD_DIMENSIONS = 4,
  VIDSEG_STATUS_NUMERIC_FAILURE = 5,
  VIDSEG_STATUS_INVALID_INPUT = 6,
} VidsegStatus;

/**
 * Opaque model handle: a loaded network plus its parameters.
 */
typedef struct VidsegModel VidsegModel;

/**
 * Scalar metric bundle for one prediction/ground-truth pair. Metrics that
 * are undefined for the pair (empty ground truth) come back as NaN.
 */
typedef struct VidsegMetrics {
  double dice;
  double f_mean;
  double f_weighted;
  double sensitivity;
  double s_measure;
  double e_mean;
} VidsegMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *vidseg_status_message(enum VidsegStatus status);

/**
 * Library version string (static).
 */
const char *vidseg_version(void);

/**
 * Loads a checkpoint by its base path (the `.ckpt`/`.json` pair written
 * by training, extension omitted). Returns null on failure; `status_out`
 * (optional) receives the reason.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `status_out`, when
 * non-null, must point to writable memory.
 */
struct VidsegModel *vidseg_model_load(const char *path, enum VidsegStatus *status_out);

/**
 * Frees a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from `vidseg_model_load` and not be freed twice.
 */
void vidseg_model_free(struct VidsegModel *model);

/**
 * The square input resolution the model was trained at.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum VidsegStatus vidseg_model_resolution(const struct VidsegModel *model, uintptr_t *out);

/**
 * Segments an anchor frame given its reference frame. Both frames are
 * 8-bit RGB, interleaved, row-major, `resolution × resolution` (see
 * `vidseg_model_resolution`). Writes `resolution²` anchor-frame
 * foreground probabilities to `out_prob`.
 *
 * # Safety
 * `anchor_rgb` and `reference_rgb` must hold `3·resolution²` bytes;
 * `out_prob` must hold `resolution²` doubles.
 */
enum VidsegStatus vidseg_model_predict(const struct VidsegModel *model,
                                       const uint8_t *anchor_rgb,
                                       const uint8_t *reference_rgb,
                                       uintptr_t height,
                                       uintptr_t width,
                                       double *out_prob);

/**
 * Scores one prediction map (f64 in [0,1], row-major) against a binary
 * ground truth (one byte per pixel, nonzero = foreground). Undefined
 * metrics (empty ground truth) come back as NaN.
 *
 * # Safety
 * `pred` must hold `height·width` doubles, `gt` as many bytes, and `out`
 * must be writable.
 */
enum VidsegStatus vidseg_evaluate_pair(const double *pred,
                                       const uint8_t *gt,
                                       uintptr_t height,
                                       uintptr_t width,
                                       struct VidsegMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDSEG_H */
