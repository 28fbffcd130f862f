#ifndef NEURAL_COLLAPSE_H
#define NEURAL_COLLAPSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcStatus {
  NC_STATUS_OK = 0,
  NC_STATUS_NULL_POINTER = 1,
  NC_STATUS_INVALID_ARGUMENT = 2,
  NC_STATUS_IO = 3,
  NC_STATUS_FORMAT = 4,
  NC_STATUS_DIMENSION_MISMATCH = 5,
  NC_STATUS_DEGENERATE = 6,
  NC_STATUS_NOT_CONVERGED = 7,
  NC_STATUS_BUFFER_TOO_SMALL = 8,
  NC_STATUS_PANIC = 9,
} NcStatus;

// Which covariance [`nc_moments_copy_covariance`] returns.
typedef enum NcCovariance {
  NC_COVARIANCE_TOTAL = 0,
  NC_COVARIANCE_BETWEEN = 1,
  NC_COVARIANCE_WITHIN = 2,
} NcCovariance;

// Linear classifier snapshot (C × p weights plus bias).
typedef struct NcClassifier NcClassifier;

// First and second moments of a pack.
typedef struct NcMoments NcMoments;

// Balanced activation pack.
typedef struct NcPack NcPack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *nc_version(void);

// Message of the last failure on this thread, or NULL when the last call
// succeeded. The pointer stays valid until the next library call on the
// same thread.
const char *nc_last_error_message(void);

// Build a pack from `per_class * num_classes` rows of `feature_dim` values,
// class-major (all rows of class 0 first).
//
// # Safety
// `data` must point to `feature_dim * num_classes * per_class` doubles and
// `out` must be writable.
enum NcStatus nc_pack_new(size_t feature_dim,
                          size_t num_classes,
                          size_t per_class,
                          const double *data,
                          struct NcPack **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum NcStatus nc_pack_read_file(const char *path, struct NcPack **out);

// # Safety
// `pack` must be a live handle and `path` a NUL-terminated string.
enum NcStatus nc_pack_write_file(const struct NcPack *pack, const char *path);

// # Safety
// `pack` must be a live handle; out-pointers must be writable.
enum NcStatus nc_pack_dims(const struct NcPack *pack,
                           size_t *feature_dim,
                           size_t *num_classes,
                           size_t *per_class);

// # Safety
// `pack` must be NULL or a handle not yet freed.
void nc_pack_free(struct NcPack *pack);

// Build a classifier from row-major `num_classes × feature_dim` weights and
// a `num_classes` bias.
//
// # Safety
// Buffers must hold the stated number of doubles and `out` be writable.
enum NcStatus nc_classifier_new(size_t num_classes,
                                size_t feature_dim,
                                const double *weights,
                                const double *bias,
                                struct NcClassifier **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum NcStatus nc_classifier_read_file(const char *path, struct NcClassifier **out);

// # Safety
// `clf` must be a live handle and `path` a NUL-terminated string.
enum NcStatus nc_classifier_write_file(const struct NcClassifier *clf, const char *path);

// # Safety
// `clf` must be a live handle; out-pointers must be writable.
enum NcStatus nc_classifier_dims(const struct NcClassifier *clf,
                                 size_t *num_classes,
                                 size_t *feature_dim);

// Copy row-major weights (`weights_len >= C*p`) and bias (`bias_len >= C`).
//
// # Safety
// `clf` must be a live handle; buffers must hold the stated lengths.
enum NcStatus nc_classifier_copy(const struct NcClassifier *clf,
                                 double *weights,
                                 size_t weights_len,
                                 double *bias,
                                 size_t bias_len);

// # Safety
// `clf` must be NULL or a handle not yet freed.
void nc_classifier_free(struct NcClassifier *clf);

// # Safety
// `pack` must be a live handle and `out` writable.
enum NcStatus nc_moments_compute(const struct NcPack *pack, struct NcMoments **out);

// Copy the global mean (`len >= p`).
//
// # Safety
// `m` must be a live handle and `buf` hold `len` doubles.
enum NcStatus nc_moments_copy_global_mean(const struct NcMoments *m, double *buf, size_t len);

// Copy a `p × p` covariance, row-major (`len >= p*p`).
//
// # Safety
// `m` must be a live handle and `buf` hold `len` doubles.
enum NcStatus nc_moments_copy_covariance(const struct NcMoments *m,
                                         enum NcCovariance which,
                                         double *buf,
                                         size_t len);

// # Safety
// `m` must be NULL or a handle not yet freed.
void nc_moments_free(struct NcMoments *m);

// Within-class variability Tr(Σ_W Σ_B†)/C. `rtol == 0` selects the default
// pseudoinverse cutoff.
//
// # Safety
// `m` must be a live handle and `out` writable.
enum NcStatus nc_nc1(const struct NcMoments *m, double rtol, double *out);

// Closed-form MSE-optimal linear classifier. `rtol == 0` selects the
// default pseudoinverse cutoff.
//
// # Safety
// `m` must be a live handle and `out` writable.
enum NcStatus nc_webb_lowe(const struct NcMoments *m, double rtol, struct NcClassifier **out);

// Squared Frobenius distance between the normalized classifier and the
// normalized centered means.
//
// # Safety
// Handles must be live and `out` writable.
enum NcStatus nc_duality_gap(const struct NcMoments *m,
                             const struct NcClassifier *clf,
                             double *out);

// Fraction of `probe` rows on which the classifier and the nearest
// class-center rule over `train`'s class means disagree.
//
// # Safety
// Handles must be live and `out` writable.
enum NcStatus nc_ncc_mismatch(const struct NcClassifier *clf,
                              const struct NcMoments *train,
                              const struct NcPack *probe,
                              double *out);

// Write the standard `C × C` simplex ETF into `buf` (`len >= C*C`).
//
// # Safety
// `buf` must hold `len` doubles.
enum NcStatus nc_standard_etf(size_t num_classes, double *buf, size_t len);

// Large-deviations exponent β of a `C × C` codec: codebook `codebook`
// (codeword c is column c), decoder rows `decoder`, bias `bias`, all
// row-major.
//
// # Safety
// Matrix buffers must hold `C*C` doubles, `bias` `C`, and `out` be writable.
enum NcStatus nc_analytic_exponent(size_t num_classes,
                                   const double *codebook,
                                   const double *decoder,
                                   const double *bias,
                                   double *out);

// Monte Carlo error rate of the simplex ETF codec at noise `sigma`.
// `ci_halfwidth` is the 95% normal-approximation half-width.
//
// # Safety
// Out-pointers must be writable.
enum NcStatus nc_codec_simulate(size_t num_classes,
                                double sigma,
                                uint64_t trials,
                                uint64_t seed,
                                uint64_t *errors,
                                double *error_rate,
                                double *ci_halfwidth);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEURAL_COLLAPSE_H */
