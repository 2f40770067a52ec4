#ifndef MARGRISK_H
#define MARGRISK_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define MARGRISK_OK 0

// Invalid argument (null pointer, bad length, bad enum value).
#define MARGRISK_ERR_ARG 1

// Input data problem (file, parse, invariant violation).
#define MARGRISK_ERR_DATA 2

// Numerical failure (no convergence, singular system).
#define MARGRISK_ERR_NUMERIC 3

// Identity time transform in the missingness design.
#define MARGRISK_DESIGN_TIME 0

// Logarithmic time transform.
#define MARGRISK_DESIGN_LOGTIME 1

// Equal-precision band weight.
#define MARGRISK_BAND_EP 0

// Hall-Wellner band weight.
#define MARGRISK_BAND_HW 1

// Opaque simultaneous confidence band.
typedef struct MargriskBand MargriskBand;

// Opaque cumulative-incidence inference at a fixed covariate value.
typedef struct MargriskCif MargriskCif;

// Opaque dataset handle.
typedef struct MargriskDataset MargriskDataset;

// Opaque fitted-model handle bundling the fit and its influence workspace.
typedef struct MargriskFit MargriskFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message into `buf` (NUL terminated, truncated to
// `cap` bytes); returns the full message length in bytes.
//
// # Safety
// `buf` must point to `cap` writable bytes, or be null (query mode).
size_t margrisk_last_error(char *buf,
                           size_t cap);

// Load a dataset from CSV. `causes` of 0 infers the cause count from the
// data. On success writes a handle to `out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int margrisk_dataset_load_csv(const char *path,
                              int causes,
                              struct MargriskDataset **out);

// # Safety
// `handle` must come from `margrisk_dataset_load_csv` or be null.
void margrisk_dataset_free(struct MargriskDataset *handle);

// Number of clusters, or -1 for a null handle.
//
// # Safety
// `handle` must be a valid dataset handle or null.
int margrisk_dataset_n_clusters(const struct MargriskDataset *handle);

// Number of subjects, or -1 for a null handle.
//
// # Safety
// `handle` must be a valid dataset handle or null.
int margrisk_dataset_n_subjects(const struct MargriskDataset *handle);

// Number of competing causes, or -1 for a null handle.
//
// # Safety
// `handle` must be a valid dataset handle or null.
int margrisk_dataset_n_causes(const struct MargriskDataset *handle);

// Number of covariates of interest, or -1 for a null handle.
//
// # Safety
// `handle` must be a valid dataset handle or null.
int margrisk_dataset_n_covariates(const struct MargriskDataset *handle);

// Fit the two-stage model. `design` selects the missingness-design time
// transform; `include_aux` includes the auxiliary covariates when nonzero.
//
// # Safety
// `data` must be a valid dataset handle and `out` a valid pointer.
int margrisk_fit_new(const struct MargriskDataset *data,
                     int design,
                     int include_aux,
                     struct MargriskFit **out);

// # Safety
// `handle` must come from `margrisk_fit_new` or be null.
void margrisk_fit_free(struct MargriskFit *handle);

// Coefficient estimates for one cause; `len` must equal the covariate
// count.
//
// # Safety
// `handle` must be a valid fit handle; `out` must hold `len` doubles.
int margrisk_fit_beta(const struct MargriskFit *handle,
                      int cause,
                      double *out,
                      size_t len);

// Sandwich standard errors for one cause's coefficients.
//
// # Safety
// As [`margrisk_fit_beta`].
int margrisk_fit_beta_se(const struct MargriskFit *handle,
                         int cause,
                         double *out,
                         size_t len);

// Stage-one coefficient vector length, or -1 for a null handle.
//
// # Safety
// `handle` must be a valid fit handle or null.
int margrisk_fit_gamma_len(const struct MargriskFit *handle);

// Stage-one (missingness model) coefficients.
//
// # Safety
// As [`margrisk_fit_beta`].
int margrisk_fit_gamma(const struct MargriskFit *handle,
                       double *out,
                       size_t len);

// Number of jump times in a cause's baseline cumulative hazard, or -1.
//
// # Safety
// `handle` must be a valid fit handle or null.
int margrisk_fit_hazard_len(const struct MargriskFit *handle,
                            int cause);

// Baseline cumulative hazard curve with pointwise standard errors. Each
// output array must hold `margrisk_fit_hazard_len` doubles.
//
// # Safety
// `handle` must be a valid fit handle; output arrays must hold `len`
// doubles each.
int margrisk_fit_hazard(const struct MargriskFit *handle,
                        int cause,
                        double *times,
                        double *values,
                        double *se,
                        size_t len);

// Build cumulative-incidence inference at covariate value `z0`.
//
// # Safety
// `fit` must be a valid fit handle, `z0` must hold `z0_len` doubles, and
// `out` must be a valid pointer.
int margrisk_cif_new(const struct MargriskFit *fit,
                     const double *z0,
                     size_t z0_len,
                     double level,
                     struct MargriskCif **out);

// # Safety
// `handle` must come from `margrisk_cif_new` or be null.
void margrisk_cif_free(struct MargriskCif *handle);

// Number of grid points of the incidence curves, or -1.
//
// # Safety
// `handle` must be a valid incidence handle or null.
int margrisk_cif_len(const struct MargriskCif *handle);

// Cumulative incidence curve for one cause with pointwise standard errors
// and transformed confidence limits. Null output arrays are skipped.
//
// # Safety
// `handle` must be a valid incidence handle; non-null output arrays must
// each hold `len` doubles.
int margrisk_cif_curve(const struct MargriskCif *handle,
                       int cause,
                       double *times,
                       double *values,
                       double *se,
                       double *lower,
                       double *upper,
                       size_t len);

// Simultaneous band for one cause's cumulative incidence over the default
// central window of event times.
//
// # Safety
// `handle` must be a valid incidence handle and `out` a valid pointer.
int margrisk_cif_band_new(const struct MargriskCif *handle,
                          int cause,
                          int weight,
                          double level,
                          size_t nsim,
                          uint64_t seed,
                          struct MargriskBand **out);

// # Safety
// `handle` must come from a band constructor or be null.
void margrisk_band_free(struct MargriskBand *handle);

// Number of grid points inside the band window, or -1.
//
// # Safety
// `handle` must be a valid band handle or null.
int margrisk_band_len(const struct MargriskBand *handle);

// Estimated critical value of the band's supremum statistic (NaN for a
// null handle).
//
// # Safety
// `handle` must be a valid band handle or null.
double margrisk_band_c_alpha(const struct MargriskBand *handle);

// Copy the band's grid, estimate, and limits. Null arrays are skipped.
//
// # Safety
// Non-null output arrays must hold `len` doubles.
int margrisk_band_curve(const struct MargriskBand *handle,
                        double *times,
                        double *estimate,
                        double *lower,
                        double *upper,
                        size_t len);

// Goodness-of-fit p-value for the missingness model of `cause`.
//
// # Safety
// `data` must be a valid dataset handle and `p_value` a valid pointer.
int margrisk_gof_pvalue(const struct MargriskDataset *data,
                        int design,
                        int include_aux,
                        int cause,
                        size_t nsim,
                        uint64_t seed,
                        double *p_value);

// ABI version for binding sanity checks.
int margrisk_abi_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARGRISK_H */
