#ifndef PROXYTEST_H
#define PROXYTEST_H

/* Generated by cbindgen at build time. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtStatus {
  PT_STATUS_OK = 0,
  PT_STATUS_NULL_POINTER = 1,
  PT_STATUS_INVALID_INPUT = 2,
  PT_STATUS_INVALID_CONFIG = 3,
  PT_STATUS_NUMERICAL = 4,
  PT_STATUS_INSUFFICIENT_DATA = 5,
  PT_STATUS_IO = 6,
  PT_STATUS_PANIC = 7,
} PtStatus;

typedef enum PtMode {
  PT_MODE_CONTINUOUS_SINGLE = 0,
  PT_MODE_CONTINUOUS_TWO_PROXY = 1,
  PT_MODE_DISCRETE = 2,
} PtMode;

/**
 * Test configuration.
 */
typedef struct PtConfig PtConfig;

/**
 * Observed sample.
 */
typedef struct PtDataset PtDataset;

/**
 * Outcome of one test run.
 */
typedef struct PtReport PtReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *pt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pt_version(void);

/**
 * Builds a continuous dataset from three arrays of length `n`.
 *
 * # Safety
 * `x`, `y`, `w` must point to `n` readable doubles; `out` must be writable.
 */
enum PtStatus pt_dataset_new_continuous(const double *x,
                                        const double *y,
                                        const double *w,
                                        uintptr_t n,
                                        struct PtDataset **out);

/**
 * Builds a categorical dataset from level codes 0..k-1.
 *
 * # Safety
 * `x`, `y`, `w` must point to `n` readable values; `out` must be writable.
 */
enum PtStatus pt_dataset_new_categorical(const uint32_t *x,
                                         const uint32_t *y,
                                         const uint32_t *w,
                                         uintptr_t n,
                                         struct PtDataset **out);

/**
 * Attaches a second proxy column.
 *
 * # Safety
 * `data` must be a live dataset handle and `z` must point to `n` readable doubles.
 */
enum PtStatus pt_dataset_set_z(struct PtDataset *data, const double *z, uintptr_t n);

/**
 * # Safety
 * `data` must be NULL or a handle from `pt_dataset_new_*` not yet freed.
 */
void pt_dataset_free(struct PtDataset *data);

/**
 * Default configuration for `mode`: K = 100, t_max = 3, α = 0.05, B = 500, seed 0.
 *
 * # Safety
 * `out` must be writable.
 */
enum PtStatus pt_config_new(enum PtMode mode, struct PtConfig **out);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum PtStatus pt_config_set_alpha(struct PtConfig *cfg, double alpha);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum PtStatus pt_config_set_replications(struct PtConfig *cfg, uintptr_t b);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum PtStatus pt_config_set_seed(struct PtConfig *cfg, uint64_t seed);

/**
 * Grid size K and upper end t_max of the t grid.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum PtStatus pt_config_set_grid(struct PtConfig *cfg, uintptr_t k, double t_max);

/**
 * Fixes λ; a non-positive value restores cross-validation.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum PtStatus pt_config_set_lambda(struct PtConfig *cfg, double lambda);

/**
 * Switches the continuous bridge to the first-moment restriction (true) or back.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum PtStatus pt_config_set_first_moment(struct PtConfig *cfg, bool on);

/**
 * Disables (true) the projection of bootstrap multipliers through the estimator.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum PtStatus pt_config_set_plain_bootstrap(struct PtConfig *cfg, bool on);

/**
 * # Safety
 * `cfg` must be NULL or a handle from `pt_config_new` not yet freed.
 */
void pt_config_free(struct PtConfig *cfg);

/**
 * Runs the test. On success `*out` owns a report to release with `pt_report_free`.
 *
 * # Safety
 * `data` and `cfg` must be live handles; `out` must be writable.
 */
enum PtStatus pt_run_test(const struct PtDataset *data,
                          const struct PtConfig *cfg,
                          struct PtReport **out);

/**
 * Reads the main numbers of a report; any output pointer may be NULL.
 *
 * # Safety
 * `report` must be a live report handle; non-null outputs must be writable.
 */
enum PtStatus pt_report_values(const struct PtReport *report,
                               double *statistic,
                               double *critical_value,
                               double *p_value,
                               bool *reject);

/**
 * Serializes the full report. Release the string with `pt_string_free`.
 *
 * # Safety
 * `report` must be a live report handle; `out` must be writable.
 */
enum PtStatus pt_report_json(const struct PtReport *report, char **out);

/**
 * # Safety
 * `report` must be NULL or a handle from `pt_run_test` not yet freed.
 */
void pt_report_free(struct PtReport *report);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library not yet freed.
 */
void pt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROXYTEST_H */
