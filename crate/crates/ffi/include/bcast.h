#ifndef BCAST_H
#define BCAST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BcastStatus {
  BCAST_STATUS_OK = 0,
  BCAST_STATUS_NULL_POINTER = 1,
  BCAST_STATUS_INVALID_ARGUMENT = 2,
  BCAST_STATUS_DATA = 3,
  BCAST_STATUS_CONFIG = 4,
  BCAST_STATUS_DIVERGENCE = 5,
  BCAST_STATUS_IO = 6,
  BCAST_STATUS_FORMAT = 7,
  BCAST_STATUS_NOT_FOUND = 8,
  BCAST_STATUS_PANIC = 9,
} BcastStatus;

// Opaque trained or loaded model.
typedef struct BcastModel BcastModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *bcast_last_error(void);

// Library version as a static NUL-terminated string.
const char *bcast_version(void);

// # Safety
// `y_hat` and `y` must point to `n` doubles; `out_value` must be writable.
enum BcastStatus bcast_rmse(const double *y_hat, const double *y, size_t n, double *out_value);

// # Safety
// As for `bcast_rmse`.
enum BcastStatus bcast_mae(const double *y_hat, const double *y, size_t n, double *out_value);

// # Safety
// As for `bcast_rmse`.
enum BcastStatus bcast_r_score(const double *y_hat, const double *y, size_t n, double *out_value);

// # Safety
// As for `bcast_rmse`.
enum BcastStatus bcast_brier(const double *f, const double *y, size_t n, double *out_value);

// Pinball loss of one quantile forecast `q` at level `tau` for observation `y`.
//
// # Safety
// `out_value` must be writable.
enum BcastStatus bcast_pinball(double y, double q, double tau, double *out_value);

// Mean Winkler score of intervals `[lb, ub]` at miscoverage `gamma`.
//
// # Safety
// `lb`, `ub` and `y` must point to `n` doubles; `out_value` must be writable.
enum BcastStatus bcast_winkler(const double *lb,
                               const double *ub,
                               const double *y,
                               size_t n,
                               double gamma,
                               double *out_value);

// `KL(N(mu_q, sigma_q²) ‖ N(mu_p, sigma_p²))`.
//
// # Safety
// `out_value` must be writable.
enum BcastStatus bcast_kl_gaussian(double mu_q,
                                   double sigma_q,
                                   double mu_p,
                                   double sigma_p,
                                   double *out_value);

// Negative log-likelihood of `y` under `N(mean, std²)`.
//
// # Safety
// `out_value` must be writable.
enum BcastStatus bcast_gaussian_nll(double mean, double std, double y, double *out_value);

// Builds an untrained model. `model_id` is `"m1"`..`"m8"`; `config_json`
// may be NULL for defaults or a JSON object of training settings.
//
// # Safety
// Strings must be NUL-terminated; `out_model` must be writable.
enum BcastStatus bcast_model_new(const char *model_id,
                                 const char *config_json,
                                 struct BcastModel **out_model);

// Trains on a half-hourly series in original units: the first `ratio` of
// windows train the model (with its internal validation split), the rest
// are ignored. Re-training starts from the current weights.
//
// # Safety
// `model` must be a live handle; `series` must point to `n` doubles.
enum BcastStatus bcast_model_train(struct BcastModel *model,
                                   const double *series,
                                   size_t n,
                                   double ratio);

// Loads `<stem>.bin` and `<stem>.json`.
//
// # Safety
// `stem` must be NUL-terminated; `out_model` must be writable.
enum BcastStatus bcast_model_load(const char *stem, struct BcastModel **out_model);

// # Safety
// `model` must be a live handle and `stem` NUL-terminated.
enum BcastStatus bcast_model_save(const struct BcastModel *model, const char *stem);

// Number of lags each input window must have, or 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
size_t bcast_model_lags(const struct BcastModel *model);

// Trainable scalar count; `vae` (optional) receives the part owned by the
// VAE, which `total` includes.
//
// # Safety
// `model` must be a live handle; `total` writable; `vae` NULL or writable.
enum BcastStatus bcast_model_param_count(const struct BcastModel *model,
                                         size_t *total,
                                         size_t *vae);

// Probabilistic forecast for `n` row-major windows of `lags` values in
// original units. Every output array holds `n` doubles and may be NULL to
// skip it. Intervals are the central 50% and 90% predictive intervals.
//
// # Safety
// `model` must be a live handle; `windows` must point to `n * lags`
// doubles; non-NULL outputs must point to `n` writable doubles.
enum BcastStatus bcast_model_forecast(const struct BcastModel *model,
                                      const double *windows,
                                      size_t n,
                                      size_t lags,
                                      size_t mc_samples,
                                      uint64_t seed,
                                      double *mean,
                                      double *std,
                                      double *lb50,
                                      double *ub50,
                                      double *lb90,
                                      double *ub90);

// Releases a handle; NULL is a no-op.
//
// # Safety
// `model` must be NULL or a handle not yet freed.
void bcast_model_free(struct BcastModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BCAST_H */
