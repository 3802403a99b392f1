/* C interface to the gazefuse gaze estimator. */

#ifndef GAZEFUSE_H
#define GAZEFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_ARGUMENT = 1,
  GF_STATUS_INVALID_ARGUMENT = 2,
  GF_STATUS_IO_ERROR = 3,
  GF_STATUS_SHAPE_ERROR = 4,
  GF_STATUS_RUNTIME_ERROR = 5,
} GfStatus;

// Opaque estimator handle: the fusion model plus its adaptation heads.
typedef struct GfEstimator GfEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Crate version as a static NUL-terminated string.
const char *gf_version(void);

// Copies the last error message on this thread into `buf` (truncating)
// and returns the full message length in bytes, excluding the NUL.
//
// # Safety
// `buf` must point to `cap` writable bytes, or be NULL (then only the
// required length is returned).
size_t gf_last_error_message(char *buf, size_t cap);

// Creates a freshly initialized estimator.
//
// `config_path` may be NULL for the default desk-scale architecture, or
// name a `key = value` model config file. `num_datasets` sizes the bank
// of per-dataset correction heads (head 0 is the anchor and is always
// zero). `seed` drives the deterministic initialization.
//
// # Safety
// `config_path` must be NULL or a NUL-terminated string; `out` must be a
// valid pointer.
enum GfStatus gf_estimator_new(const char *config_path,
                               size_t num_datasets,
                               uint64_t seed,
                               struct GfEstimator **out);

// Loads the estimator of a finished training run directory
// (`run_manifest.txt` + `checkpoint.gzf`).
//
// # Safety
// `run_dir` must be a NUL-terminated string; `out` must be valid.
enum GfStatus gf_estimator_load(const char *run_dir, struct GfEstimator **out);

// Frees a handle; NULL is a no-op.
//
// # Safety
// `est` must have come from `gf_estimator_new`/`gf_estimator_load` and
// not already be freed.
void gf_estimator_free(struct GfEstimator *est);

// Writes the expected square input resolutions (face, eye) in pixels and
// the channel count.
//
// # Safety
// All pointers must be valid or NULL (NULL outputs are skipped).
enum GfStatus gf_estimator_input_sizes(const struct GfEstimator *est,
                                       size_t *face_size,
                                       size_t *eye_size,
                                       size_t *channels);

// Number of trainable parameters (shared estimator plus adaptation heads).
//
// # Safety
// `est` must be a live handle.
uint64_t gf_estimator_param_count(const struct GfEstimator *est);

// Predicts gaze from row-major `f64` image buffers in [0, 1].
//
// `dataset_id < 0` returns the raw shared-estimator output; `0` routes
// through the anchor head (identical to raw); positive ids apply that
// dataset's learned correction. `face` may be NULL for eyes-only
// topologies (pass `face_len = 0`).
//
// # Safety
// Buffers must hold the stated number of doubles; `yaw`/`pitch` must be
// valid pointers.
enum GfStatus gf_estimator_predict(const struct GfEstimator *est,
                                   int dataset_id,
                                   const double *face,
                                   size_t face_len,
                                   const double *left,
                                   size_t left_len,
                                   const double *right,
                                   size_t right_len,
                                   double *yaw,
                                   double *pitch);

// Converts (yaw, pitch) radians to the unit gaze direction.
//
// # Safety
// `x`, `y`, `z` must be valid pointers.
enum GfStatus gf_angles_to_vector(double yaw, double pitch, double *x, double *y, double *z);

// Converts a gaze direction (any nonzero length) to (yaw, pitch) radians.
//
// # Safety
// `yaw`, `pitch` must be valid pointers.
enum GfStatus gf_vector_to_angles(double x, double y, double z, double *yaw, double *pitch);

// Angle between two gaze directions, in degrees (radian inputs).
double gf_angular_error_deg(double yaw_a, double pitch_a, double yaw_b, double pitch_b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAZEFUSE_H */
