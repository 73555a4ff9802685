#ifndef ARTMARKS_H
#define ARTMARKS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of landmarks in every landmark array.
 */
#define AM_NUM_LANDMARKS 68

typedef enum AmStatus {
  AM_STATUS_OK = 0,
  AM_STATUS_NULL_POINTER = 1,
  AM_STATUS_INVALID_ARGUMENT = 2,
  AM_STATUS_IO = 3,
  AM_STATUS_MALFORMED = 4,
  AM_STATUS_DEGENERATE = 5,
  AM_STATUS_REGISTRATION_FAILED = 6,
  AM_STATUS_MODEL = 7,
  AM_STATUS_PANIC = 8,
  AM_STATUS_INTERNAL = 9,
} AmStatus;

/**
 * Loaded model bundle.
 */
typedef struct AmDetector AmDetector;

/**
 * Fitted thin-plate spline.
 */
typedef struct AmTps AmTps;

typedef struct AmPoint {
  double x;
  double y;
} AmPoint;

/**
 * `dst = scale * R(angle) * src + (tx, ty)`.
 */
typedef struct AmSimilarity {
  double angle;
  double scale;
  double tx;
  double ty;
} AmSimilarity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty after a success. The
 * pointer stays valid until the next call on the same thread.
 */
const char *am_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *am_version(void);

/**
 * Load a model bundle directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AmStatus am_detector_load(const char *dir, struct AmDetector **out);

/**
 * Release a detector. Null is ignored.
 *
 * # Safety
 * `detector` must come from [`am_detector_load`] and not be used afterwards.
 */
void am_detector_free(struct AmDetector *detector);

/**
 * Predict landmarks for an interleaved 8-bit RGB image of `width * height`
 * pixels with rows `stride` bytes apart. `out_refined` receives the final
 * 68 points; `out_global` (nullable) the coarse estimate.
 *
 * # Safety
 * `rgb` must hold `stride * height` bytes and the outputs 68 points each.
 */
enum AmStatus am_detector_predict(const struct AmDetector *detector,
                                  const uint8_t *rgb,
                                  uint32_t width,
                                  uint32_t height,
                                  size_t stride,
                                  struct AmPoint *out_refined,
                                  struct AmPoint *out_global);

/**
 * Expected grid coordinates under a per-channel softmax of
 * `temperature * heatmaps`. Heatmaps are `channels x height x width`,
 * row-major; cell (row i, column j) is the point (j, i).
 *
 * # Safety
 * `heatmaps` must hold `channels * height * width` values and `out`
 * `channels` points.
 */
enum AmStatus am_softargmax(const double *heatmaps,
                            size_t channels,
                            size_t height,
                            size_t width,
                            double temperature,
                            struct AmPoint *out);

/**
 * Least-squares similarity mapping `src` onto `dst`.
 *
 * # Safety
 * `src` and `dst` must hold `n` points; `out` must be writable.
 */
enum AmStatus am_fit_similarity(const struct AmPoint *src,
                                const struct AmPoint *dst,
                                size_t n,
                                struct AmSimilarity *out);

/**
 * Robust similarity fit. `inlier_mask` (nullable) receives `n` flags and
 * `num_inliers` (nullable) their count.
 *
 * # Safety
 * `src` and `dst` must hold `n` points, `inlier_mask` `n` bytes if non-null.
 */
enum AmStatus am_ransac_similarity(const struct AmPoint *src,
                                   const struct AmPoint *dst,
                                   size_t n,
                                   double threshold_px,
                                   size_t max_trials,
                                   size_t min_inliers,
                                   uint64_t seed,
                                   struct AmSimilarity *out,
                                   uint8_t *inlier_mask,
                                   size_t *num_inliers);

/**
 * Mean Euclidean distance between two 68-point sets over `subset`
 * (`subset_len` indices), or over all 68 points when `subset` is null.
 *
 * # Safety
 * `pred` and `gt` must hold 68 points, `subset` `subset_len` indices.
 */
enum AmStatus am_mean_error(const struct AmPoint *pred,
                            const struct AmPoint *gt,
                            const size_t *subset,
                            size_t subset_len,
                            double *out);

/**
 * Read a `.pts` or JSON landmark file into 68 zero-based pixel points.
 * `.pts` coordinates are treated as one-based when `one_based` is true.
 * `image_width`/`image_height` give the frame of `.pts` files (0 probes a
 * sibling image); the frame used is written to the nullable size outputs.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` hold 68 points.
 */
enum AmStatus am_read_landmarks(const char *path,
                                bool one_based,
                                uint32_t image_width,
                                uint32_t image_height,
                                struct AmPoint *out,
                                uint32_t *out_width,
                                uint32_t *out_height);

/**
 * Fit a thin-plate spline taking `src` control points to `dst`.
 *
 * # Safety
 * `src` and `dst` must hold `n` points; `out` must be writable.
 */
enum AmStatus am_tps_fit(const struct AmPoint *src,
                         const struct AmPoint *dst,
                         size_t n,
                         double regularization,
                         struct AmTps **out);

/**
 * Map `n` points through a fitted spline.
 *
 * # Safety
 * `input` and `output` must hold `n` points (they may alias).
 */
enum AmStatus am_tps_eval(const struct AmTps *tps,
                          const struct AmPoint *input,
                          size_t n,
                          struct AmPoint *output);

/**
 * Release a spline. Null is ignored.
 *
 * # Safety
 * `tps` must come from [`am_tps_fit`] and not be used afterwards.
 */
void am_tps_free(struct AmTps *tps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARTMARKS_H */
