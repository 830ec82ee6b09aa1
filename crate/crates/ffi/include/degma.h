#ifndef DEGMA_H
#define DEGMA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum DegmaStatus {
  DEGMA_STATUS_OK = 0,
  DEGMA_STATUS_NULL_POINTER = 1,
  DEGMA_STATUS_INVALID_ARGUMENT = 2,
  DEGMA_STATUS_CONFIG = 3,
  DEGMA_STATUS_NUMERICAL = 4,
  DEGMA_STATUS_VERIFICATION_FAILED = 5,
  DEGMA_STATUS_IO = 6,
  DEGMA_STATUS_BUFFER_TOO_SMALL = 7,
  DEGMA_STATUS_PANIC = 8,
} DegmaStatus;

/**
 * Opaque radial profile.
 */
typedef struct DegmaRadial DegmaRadial;

/**
 * Opaque 2D solution.
 */
typedef struct DegmaSolution DegmaSolution;

/**
 * Scalars of the radial profile.
 */
typedef struct DegmaRadialSummary {
  double p;
  double rho;
  double h0;
  /**
   * Leading coefficient of `f ~ A (r - rho)^q` at the interface.
   */
  double leading;
  double gprime;
  double gprime_closed_form;
  double fit_slope;
  double q;
} DegmaRadialSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library from this thread.
 */
const char *degma_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *degma_version(void);

/**
 * Integrates the radial profile with exponent `p`, interface radius `rho`
 * and constant forcing `h0` out to `outer_radius`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DegmaStatus degma_radial_solve(double p,
                                    double rho,
                                    double h0,
                                    double outer_radius,
                                    struct DegmaRadial **out);

/**
 * Evaluates the profile and its derivative at radius `r`.
 *
 * # Safety
 * `handle` must come from [`degma_radial_solve`]; `f` and `fprime` must be
 * valid for writes.
 */
enum DegmaStatus degma_radial_eval(const struct DegmaRadial *handle,
                                   double r,
                                   double *f,
                                   double *fprime);

/**
 * # Safety
 * `handle` must come from [`degma_radial_solve`]; `out` must be valid for
 * writes.
 */
enum DegmaStatus degma_radial_summary(const struct DegmaRadial *handle,
                                      struct DegmaRadialSummary *out);

/**
 * # Safety
 * `handle` must come from [`degma_radial_solve`] and not be used afterwards.
 * Null is ignored.
 */
void degma_radial_free(struct DegmaRadial *handle);

/**
 * Solves the 2D problem described by a TOML run configuration (schema
 * `degma.run/1`).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out` must be valid for
 * writes.
 */
enum DegmaStatus degma_solve(const char *config_toml, struct DegmaSolution **out);

/**
 * Grid nodes per axis; 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or come from [`degma_solve`].
 */
size_t degma_solution_n(const struct DegmaSolution *handle);

/**
 * 1 when the sweep converged, 0 otherwise (or for a null handle).
 *
 * # Safety
 * `handle` must be null or come from [`degma_solve`].
 */
int32_t degma_solution_converged(const struct DegmaSolution *handle);

/**
 * Copies the density, row-major with `x` fastest, `n * n` values.
 *
 * # Safety
 * `handle` must come from [`degma_solve`]; `out` must hold `len` doubles;
 * `needed` may be null.
 */
enum DegmaStatus degma_solution_density(const struct DegmaSolution *handle,
                                        double *out,
                                        size_t len,
                                        size_t *needed);

/**
 * Copies the pressure, same layout as the density.
 *
 * # Safety
 * As for [`degma_solution_density`].
 */
enum DegmaStatus degma_solution_pressure(const struct DegmaSolution *handle,
                                         double *out,
                                         size_t len,
                                         size_t *needed);

/**
 * Copies the interface polyline as interleaved `x, y` pairs.
 *
 * # Safety
 * As for [`degma_solution_density`].
 */
enum DegmaStatus degma_solution_interface(const struct DegmaSolution *handle,
                                          double *out,
                                          size_t len,
                                          size_t *needed);

/**
 * # Safety
 * `handle` must come from [`degma_solve`] and not be used afterwards. Null
 * is ignored.
 */
void degma_solution_free(struct DegmaSolution *handle);

/**
 * Runs a batch command (`radial`, `solve`, `continuation` or `diagnose`)
 * writing artifacts into `out_dir`. `exit_code` receives the command's
 * exit code (0 success, 2 verification failure). Returns
 * `DEGMA_STATUS_VERIFICATION_FAILED` alongside exit code 2.
 *
 * # Safety
 * String arguments must be NUL-terminated; `exit_code` may be null.
 */
enum DegmaStatus degma_run(const char *command,
                           const char *config_toml,
                           const char *out_dir,
                           int32_t *exit_code);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DEGMA_H */
