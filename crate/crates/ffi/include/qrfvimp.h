#ifndef QRFVIMP_H
#define QRFVIMP_H

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum QrfStatus {
  QRF_STATUS_OK = 0,
  QRF_STATUS_NULL_POINTER = 1,
  QRF_STATUS_INVALID_INPUT = 2,
  QRF_STATUS_CONFIG = 3,
  QRF_STATUS_DATA = 4,
  QRF_STATUS_DIMENSION_MISMATCH = 5,
  QRF_STATUS_FOLD_LEAKAGE = 6,
  QRF_STATUS_NUMERICAL = 7,
  QRF_STATUS_CORRUPT_MODEL = 8,
  QRF_STATUS_IO = 9,
  QRF_STATUS_PANIC = 10,
} QrfStatus;

// Opaque fitted model together with its training responses.
typedef struct QrfModel QrfModel;

// Forest settings. Obtain defaults from [`qrf_forest_params_default`].
typedef struct QrfForestParams {
  size_t num_trees;
  // Subsample size; 0 selects `round(n^beta)`.
  size_t subsample_size;
  // Subsampling rate, used when `subsample_size` is 0.
  double beta;
  double alpha;
  size_t min_leaf_est;
  // Candidate features per split; 0 selects `ceil(sqrt(p))`.
  size_t mtry;
  uint64_t seed;
  double tau;
} QrfForestParams;

// One prediction with its pointwise interval.
typedef struct QrfPrediction {
  double q_hat;
  double eta_hat;
  double f_hat;
  double ci_low;
  double ci_high;
} QrfPrediction;

// Importance of a feature subset with raw and bias-corrected intervals.
typedef struct QrfVimpResult {
  double v_hat;
  double sigma_s_hat;
  double ci_low;
  double ci_high;
  double c_hat;
  double v_tilde;
  double ci_corrected_low;
  double ci_corrected_high;
  double beta_used;
  size_t n_eval;
  size_t n_train;
  size_t subsample_size;
} QrfVimpResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *qrf_last_error(void);

// Library version as a static nul-terminated string.
const char *qrf_version(void);

// Library defaults: 1000 trees, `beta = 0.5`, `alpha = 0.05`,
// `min_leaf_est = 5`, automatic `mtry`, seed 0, median.
struct QrfForestParams qrf_forest_params_default(void);

// Fits a forest on `n` rows of `p` features.
//
// # Safety
// `x` must hold `n * p` row-major values, `y` must hold `n` values, `params`
// must point to a valid struct and `out` must be writable.
enum QrfStatus qrf_model_fit(const double *x,
                             const double *y,
                             size_t n,
                             size_t p,
                             const struct QrfForestParams *params,
                             struct QrfModel **out);

// Loads a model written by [`qrf_model_save`] or the `fit` command.
//
// # Safety
// `path` must be a nul-terminated string and `out` must be writable.
enum QrfStatus qrf_model_load(const char *path_, struct QrfModel **out);

// Writes the model as versioned JSON.
//
// # Safety
// `model` must come from this library and `path` must be nul-terminated.
enum QrfStatus qrf_model_save(const struct QrfModel *model, const char *path_);

// Number of features the model expects, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from this library.
size_t qrf_model_dim(const struct QrfModel *model);

// Number of training rows, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from this library.
size_t qrf_model_n_train(const struct QrfModel *model);

// Predicts `m` query rows of `p` features with intervals at `level`.
//
// # Safety
// `x` must hold `m * p` values and `out` must have room for `m` results.
enum QrfStatus qrf_model_predict(const struct QrfModel *model,
                                 const double *x,
                                 size_t m,
                                 size_t p,
                                 double level,
                                 struct QrfPrediction *out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a live handle from this library, freed once.
void qrf_model_free(struct QrfModel *model);

// Cross-fitted importance of the features listed in `subset` (0-based
// column indices, `subset_len` may be 0). The fold assignment is derived
// from `params.seed`.
//
// # Safety
// `x` must hold `n * p` values, `y` must hold `n` values, `subset` must
// hold `subset_len` values and `out` must be writable.
enum QrfStatus qrf_vimp(const double *x,
                        const double *y,
                        size_t n,
                        size_t p,
                        const size_t *subset,
                        size_t subset_len,
                        const struct QrfForestParams *params,
                        double level,
                        struct QrfVimpResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QRFVIMP_H */
