#ifndef FAPN_H
#define FAPN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FapnStatus {
  FAPN_STATUS_OK = 0,
  FAPN_STATUS_NULL_POINTER = 1,
  FAPN_STATUS_INVALID_UTF8 = 2,
  FAPN_STATUS_SHAPE = 3,
  FAPN_STATUS_CONFIG = 4,
  FAPN_STATUS_DATA = 5,
  FAPN_STATUS_NON_FINITE = 6,
  FAPN_STATUS_FORMAT = 7,
  FAPN_STATUS_IO = 8,
  FAPN_STATUS_CONTRACT = 9,
  FAPN_STATUS_PANIC = 10,
} FapnStatus;

/**
 * Opaque model handle.
 */
typedef struct FapnModel FapnModel;

/**
 * Opaque tensor handle.
 */
typedef struct FapnTensor FapnTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fapn_last_error(void);

/**
 * Copies `n*c*h*w` values from `data` into a new tensor.
 *
 * # Safety
 * `data` must point to `n*c*h*w` readable doubles; `out` must be writable.
 */
enum FapnStatus fapn_tensor_new(size_t n,
                                size_t c,
                                size_t h,
                                size_t w,
                                const double *data,
                                struct FapnTensor **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FapnStatus fapn_tensor_load(const char *path, struct FapnTensor **out);

/**
 * # Safety
 * `t` must be a live tensor handle and `path` a NUL-terminated string.
 */
enum FapnStatus fapn_tensor_save(const struct FapnTensor *t, const char *path);

/**
 * Writes `(n, c, h, w)` into `dims[0..4]`.
 *
 * # Safety
 * `t` must be a live tensor handle; `dims` must hold 4 writable values.
 */
enum FapnStatus fapn_tensor_dims(const struct FapnTensor *t, size_t *dims);

/**
 * Borrowed row-major values; valid until the handle is freed. Writes the
 * element count to `len` when it is not null.
 *
 * # Safety
 * `t` must be a live tensor handle or null.
 */
const double *fapn_tensor_data(const struct FapnTensor *t, size_t *len);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void fapn_tensor_free(struct FapnTensor *t);

/**
 * Fresh model with seeded initialisation.
 *
 * # Safety
 * `arch` must be a NUL-terminated string; `out` must be writable.
 */
enum FapnStatus fapn_model_new(const char *arch,
                               size_t classes,
                               size_t width,
                               uint64_t seed,
                               struct FapnModel **out);

/**
 * Loads a trained model from a run directory holding `config.txt` and
 * `checkpoint/`.
 *
 * # Safety
 * `run_dir` must be a NUL-terminated string; `out` must be writable.
 */
enum FapnStatus fapn_model_load(const char *run_dir, struct FapnModel **out);

/**
 * # Safety
 * `m` must be a live model handle.
 */
size_t fapn_model_classes(const struct FapnModel *m);

/**
 * # Safety
 * `m` must be a live model handle.
 */
size_t fapn_model_param_count(const struct FapnModel *m);

/**
 * Input-resolution logits `(1, classes, H, W)` for an image `(1, 3, H, W)`.
 *
 * # Safety
 * `m` and `image` must be live handles; `out` must be writable.
 */
enum FapnStatus fapn_model_logits(const struct FapnModel *m,
                                  const struct FapnTensor *image,
                                  struct FapnTensor **out);

/**
 * Writes `H*W` argmax class ids into `labels`; `len` must equal `H*W`.
 *
 * # Safety
 * `m` and `image` must be live handles; `labels` must hold `len` values.
 */
enum FapnStatus fapn_model_predict(const struct FapnModel *m,
                                   const struct FapnTensor *image,
                                   size_t *labels,
                                   size_t len);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void fapn_model_free(struct FapnModel *m);

/**
 * Mean IoU over classes present in `gt`.
 *
 * # Safety
 * `pred` and `gt` must each hold `h*w` values; `out` must be writable.
 */
enum FapnStatus fapn_miou(const size_t *pred,
                          const size_t *gt,
                          size_t h,
                          size_t w,
                          size_t classes,
                          double *out);

/**
 * mIoU over pixels within Chebyshev distance `n` of a ground-truth
 * outline. `empty_band` (may be null) is set to 1 when the band is empty,
 * in which case the score is 1.0.
 *
 * # Safety
 * `pred` and `gt` must each hold `h*w` values; `out` must be writable.
 */
enum FapnStatus fapn_boundary_miou(const size_t *pred,
                                   const size_t *gt,
                                   size_t h,
                                   size_t w,
                                   size_t classes,
                                   size_t n,
                                   double *out,
                                   int *empty_band);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAPN_H */
