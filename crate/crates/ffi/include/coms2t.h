#ifndef COMS2T_H
#define COMS2T_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every exported function.
 */
typedef enum Coms2tStatus {
  COMS2T_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  COMS2T_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  COMS2T_STATUS_INVALID_UTF8 = 2,
  /**
   * Invalid configuration, schema violation or unreadable input.
   */
  COMS2T_STATUS_CONFIG = 3,
  /**
   * Non-finite values, divergence or a singular closed form.
   */
  COMS2T_STATUS_NUMERICS = 4,
  /**
   * Any other pipeline failure (shapes, I/O, reports, ...).
   */
  COMS2T_STATUS_RUNTIME = 5,
  /**
   * The requested variant is not part of the report.
   */
  COMS2T_STATUS_NOT_FOUND = 6,
  /**
   * The library panicked; the handle arguments should be discarded.
   */
  COMS2T_STATUS_PANIC = 7,
} Coms2tStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct Coms2tConfig Coms2tConfig;

/**
 * Opaque experiment report.
 */
typedef struct Coms2tReport Coms2tReport;

/**
 * One node's neighborhood and observation moments for the closed-form
 * error-amplification theory. `d` must exceed 1 and `p` lie in (0, 1).
 */
typedef struct Coms2tNeighborhood {
  size_t d;
  double p;
  double mu0;
  double sigma0;
  double mu_t;
  double mu_next;
  double mu_c;
  double mu_s;
  double w_c;
  double w_s;
  double q;
  double mu_w;
  double sigma_w;
} Coms2tNeighborhood;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none occurred.
 * The string stays valid until the next failing call on the same thread.
 */
const char *coms2t_last_error(void);

/**
 * Writes a new handle holding the small desk-scale preset to `*out`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum Coms2tStatus coms2t_config_desk_scale(struct Coms2tConfig **out);

/**
 * Parses and validates a JSON experiment configuration; missing fields
 * take their defaults.
 *
 * # Safety
 * `json` must be null or a NUL-terminated string; `out` must be null or
 * valid for writes.
 */
enum Coms2tStatus coms2t_config_from_json(const char *json, struct Coms2tConfig **out);

/**
 * Replaces the seed list of a configuration.
 *
 * # Safety
 * `config` must be a live handle or null; `seeds` must point to `len`
 * readable values.
 */
enum Coms2tStatus coms2t_config_set_seeds(struct Coms2tConfig *config,
                                          const uint64_t *seeds,
                                          size_t len);

/**
 * Serializes a configuration to JSON; release the string with
 * [`coms2t_string_free`].
 *
 * # Safety
 * `config` must be a live handle or null; `out` must be null or valid for
 * writes.
 */
enum Coms2tStatus coms2t_config_to_json(const struct Coms2tConfig *config, char **out);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void coms2t_config_free(struct Coms2tConfig *config);

/**
 * Trains and evaluates the variants named in `variants` (comma-separated,
 * e.g. `"full,non_ttf"`; null runs all five) over every configured seed.
 * When `out_dir` is non-null the run directories and `report.json` are
 * written there.
 *
 * # Safety
 * `config` must be a live handle; `variants` and `out_dir` must be null or
 * NUL-terminated; `out` must be null or valid for writes.
 */
enum Coms2tStatus coms2t_run_variants(const struct Coms2tConfig *config,
                                      const char *variants,
                                      const char *out_dir,
                                      struct Coms2tReport **out);

/**
 * Loads a `report.json` written by a previous run.
 *
 * # Safety
 * `path` must be null or NUL-terminated; `out` must be null or valid for
 * writes.
 */
enum Coms2tStatus coms2t_report_load(const char *path, struct Coms2tReport **out);

/**
 * Mean and standard deviation over seeds of one variant's test MAE.
 *
 * # Safety
 * `report` must be a live handle; `variant` NUL-terminated; `mean` and
 * `std` null or valid for writes.
 */
enum Coms2tStatus coms2t_report_test_mae(const struct Coms2tReport *report,
                                         const char *variant,
                                         double *mean,
                                         double *std);

/**
 * Serializes a report to JSON; release the string with
 * [`coms2t_string_free`].
 *
 * # Safety
 * `report` must be a live handle; `out` null or valid for writes.
 */
enum Coms2tStatus coms2t_report_to_json(const struct Coms2tReport *report, char **out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void coms2t_report_free(struct Coms2tReport *report);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void coms2t_string_free(char *s);

/**
 * Writes the default neighborhood (degree 4, half causal, q = 3).
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum Coms2tStatus coms2t_neighborhood_default(struct Coms2tNeighborhood *out);

/**
 * Closed-form ratio of the shifted to the in-distribution aggregation
 * error; equals `q` for every valid neighborhood.
 *
 * # Safety
 * `spec` must be null or readable; `out` null or valid for writes.
 */
enum Coms2tStatus coms2t_amplification_ratio(const struct Coms2tNeighborhood *spec, double *out);

/**
 * Runs the closed-form and Monte-Carlo theory checks. `json` (nullable)
 * overrides the default check configuration; `*passed` receives 1 when
 * every check is within tolerance and 0 otherwise.
 *
 * # Safety
 * `json` must be null or NUL-terminated; `passed` null or valid for writes.
 */
enum Coms2tStatus coms2t_theory_check(const char *json, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMS2T_H */
