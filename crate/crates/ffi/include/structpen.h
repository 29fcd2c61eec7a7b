#ifndef STRUCTPEN_H
#define STRUCTPEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_DIMENSION_MISMATCH = 3,
  SP_STATUS_NON_FINITE = 4,
  SP_STATUS_NUMERICAL = 5,
  SP_STATUS_IO = 6,
  /**
   * The call was aborted by an internal panic.
   */
  SP_STATUS_INTERNAL = 7,
} SpStatus;

/**
 * Feature blocks and responses.
 */
typedef struct SpDataset SpDataset;

/**
 * A fitted model.
 */
typedef struct SpFit SpFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null if none. The
 * string stays valid until the next failing call on the same thread.
 */
const char *sp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/**
 * Build a dataset from `y` (`n × m`) and `x` (`n × p`, the blocks side by
 * side, `block_sizes` summing to `p`).
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` must be writable.
 */
enum SpStatus sp_dataset_new(const double *y,
                             size_t n,
                             size_t m,
                             const double *x,
                             size_t p,
                             const size_t *block_sizes,
                             size_t n_blocks,
                             struct SpDataset **out);

/**
 * # Safety
 * `ds` must come from [`sp_dataset_new`] and not be used afterwards.
 */
void sp_dataset_free(struct SpDataset *ds);

/**
 * Fit `method` at penalty level `lambda` on internally standardized
 * features. `ratios` (one per block, first 1) and `alphas` may be empty.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `method` must be a
 * NUL-terminated string; `out` must be writable.
 */
enum SpStatus sp_fit(const struct SpDataset *ds,
                     const char *method,
                     double lambda,
                     const double *ratios,
                     size_t n_ratios,
                     const double *alphas,
                     size_t n_alphas,
                     struct SpFit **out);

/**
 * Tune `method` by `folds`-fold cross-validation and refit on all rows.
 *
 * # Safety
 * As for [`sp_fit`].
 */
enum SpStatus sp_tune(const struct SpDataset *ds,
                      const char *method,
                      size_t folds,
                      size_t n_lambda,
                      size_t max_evals,
                      uint64_t seed,
                      struct SpFit **out);

/**
 * # Safety
 * `fit` must come from [`sp_fit`] or [`sp_tune`] and not be used afterwards.
 */
void sp_fit_free(struct SpFit *fit);

/**
 * Number of features `p` and responses `m` of a fit.
 *
 * # Safety
 * `fit` must be a live handle; `p` and `m` must be writable.
 */
enum SpStatus sp_fit_dims(const struct SpFit *fit, size_t *p, size_t *m);

/**
 * 1 if the solver converged, 0 otherwise.
 *
 * # Safety
 * `fit` must be a live handle; `converged` must be writable.
 */
enum SpStatus sp_fit_converged(const struct SpFit *fit, int32_t *converged);

/**
 * Penalty level `λ₁` of the fit, in standardized-feature units.
 *
 * # Safety
 * `fit` must be a live handle; `lambda` must be writable.
 */
enum SpStatus sp_fit_lambda(const struct SpFit *fit, double *lambda);

/**
 * Copy the `p × m` coefficient matrix (row-major) into `buf` of length `len`.
 *
 * # Safety
 * `buf` must be writable for `len` values.
 */
enum SpStatus sp_fit_coefficients(const struct SpFit *fit, double *buf, size_t len);

/**
 * Copy the `m` intercepts into `buf` of length `len`.
 *
 * # Safety
 * `buf` must be writable for `len` values.
 */
enum SpStatus sp_fit_intercepts(const struct SpFit *fit, double *buf, size_t len);

/**
 * Predict the `n × m` responses (row-major) of `ds` into `buf`.
 *
 * # Safety
 * Handles must be live; `buf` must be writable for `len` values.
 */
enum SpStatus sp_fit_predict(const struct SpFit *fit,
                             const struct SpDataset *ds,
                             double *buf,
                             size_t len);

/**
 * Serialize a fit to JSON. Release the string with [`sp_string_free`].
 *
 * # Safety
 * `fit` must be a live handle; `out` must be writable.
 */
enum SpStatus sp_fit_to_json(const struct SpFit *fit, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRUCTPEN_H */
