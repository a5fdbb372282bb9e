#ifndef STABLE_DYN_H
#define STABLE_DYN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_POINTER = 1,
  SD_STATUS_INVALID_ARGUMENT = 2,
  SD_STATUS_SHAPE_MISMATCH = 3,
  SD_STATUS_IO = 4,
  SD_STATUS_PARSE = 5,
  SD_STATUS_SCHEMA = 6,
  SD_STATUS_NUMERIC = 7,
  SD_STATUS_DIVERGENCE = 8,
  SD_STATUS_PANIC = 9,
} SdStatus;

/**
 * Opaque handle to a trained or random vector-field model.
 */
typedef struct SdModel SdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sd_version(void);

/**
 * Static description of a status code.
 */
const char *sd_status_string(enum SdStatus status);

/**
 * Message for the last failed call on this thread (empty after a success).
 * Valid until the next call into the library from the same thread.
 */
const char *sd_last_error_message(void);

/**
 * Creates a freshly initialised model.
 *
 * `stable` selects the projected stable model (nonzero) or the bare nominal
 * network (zero). Hidden widths are read from the two arrays.
 *
 * # Safety
 * Width arrays must hold the stated number of elements; `out` must be writable.
 */
enum SdStatus sd_model_new_random(size_t state_dim,
                                  int32_t stable,
                                  const size_t *fhat_hidden,
                                  size_t fhat_len,
                                  const size_t *icnn_hidden,
                                  size_t icnn_len,
                                  double alpha,
                                  double epsilon,
                                  double smooth_d,
                                  uint64_t seed,
                                  struct SdModel **out);

/**
 * Loads a dynamics checkpoint written by `sd_model_save` or `stable-dyn pendulum train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SdStatus sd_model_load(const char *path, struct SdModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum SdStatus sd_model_save(const struct SdModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void sd_model_free(struct SdModel *model);

/**
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum SdStatus sd_model_state_dim(const struct SdModel *model, size_t *out);

/**
 * Writes 1 for a stable model and 0 for a naive one.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum SdStatus sd_model_is_stable(const struct SdModel *model, int32_t *out);

/**
 * Vector field `f(x)` at `n` coordinates of `x`, written to `out`.
 *
 * # Safety
 * `x` and `out` must each hold `n` doubles.
 */
enum SdStatus sd_model_eval(const struct SdModel *model, const double *x, size_t n, double *out);

/**
 * `V(x)` and, when `grad` is non-null, `∇V(x)`. Fails for naive models.
 *
 * # Safety
 * `x` (and `grad` if given) must hold `n` doubles; `value` must be writable.
 */
enum SdStatus sd_model_lyapunov(const struct SdModel *model,
                                const double *x,
                                size_t n,
                                double *value,
                                double *grad);

/**
 * RK4 rollout of `steps` steps from `x0`; `out` receives `(steps + 1) · n`
 * doubles, row by row. On divergence the status is `SD_STATUS_DIVERGENCE` and `out`
 * is left untouched.
 *
 * # Safety
 * `x0` must hold `n` doubles and `out` `(steps + 1) · n` doubles.
 */
enum SdStatus sd_model_rollout(const struct SdModel *model,
                               const double *x0,
                               size_t n,
                               double dt,
                               size_t steps,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STABLE_DYN_H */
