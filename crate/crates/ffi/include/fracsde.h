#ifndef FRACSDE_H
#define FRACSDE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Approximation scheme selector.
 */
typedef enum FracsdeScheme {
  FRACSDE_SCHEME_EULER = 0,
  FRACSDE_SCHEME_MILSTEIN = 1,
  FRACSDE_SCHEME_CRANK_NICOLSON = 2,
} FracsdeScheme;

/**
 * Result code of every fallible call.
 */
typedef enum FracsdeStatus {
  FRACSDE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FRACSDE_STATUS_NULL_POINTER = 1,
  /**
   * Malformed string, wrong buffer length or similar.
   */
  FRACSDE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Parameter outside the domain of the quantity.
   */
  FRACSDE_STATUS_DOMAIN = 3,
  /**
   * Documented precondition violated.
   */
  FRACSDE_STATUS_CONTRACT = 4,
  /**
   * Unknown model or bad model parameters.
   */
  FRACSDE_STATUS_CONFIG = 5,
  /**
   * Solver, root finder or factorization failure.
   */
  FRACSDE_STATUS_NUMERIC = 6,
  FRACSDE_STATUS_IO = 7,
  /**
   * Internal panic caught at the boundary.
   */
  FRACSDE_STATUS_PANIC = 8,
} FracsdeStatus;

/**
 * Coefficient pair `(b, σ)`.
 */
typedef struct FracsdeModel FracsdeModel;

/**
 * Sampled fBm path on a dyadic grid.
 */
typedef struct FracsdePath FracsdePath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fracsde_version(void);

/**
 * Message of the most recent failed call on this thread, or null if none
 * failed yet. Valid until the next failing call on the same thread.
 */
const char *fracsde_last_error_message(void);

/**
 * Builds a registered model (`constant`, `linear-drift`, `sinh`, `trig`).
 *
 * # Safety
 * `name` must be a NUL-terminated string. `params_json` is a NUL-terminated
 * JSON object or null for defaults. `out` must be writable.
 */
enum FracsdeStatus fracsde_model_new(const char *name,
                                     const char *params_json,
                                     struct FracsdeModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`fracsde_model_new`] and not be used afterwards.
 */
void fracsde_model_free(struct FracsdeModel *model);

/**
 * Drift `b(x)` and diffusion `σ(x)`.
 *
 * # Safety
 * `model` must be a live handle; `b` and `sigma` must be writable.
 */
enum FracsdeStatus fracsde_model_eval(const struct FracsdeModel *model,
                                      double x,
                                      double *b,
                                      double *sigma);

/**
 * Samples fBm on `2^fine_level + 1` nodes of `[0, 1]` from the stream
 * `(seed, index)`. The path starts at level `fine_level`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FracsdeStatus fracsde_fbm_sample(uint32_t fine_level,
                                      double hurst,
                                      uint64_t seed,
                                      uint64_t index,
                                      struct FracsdePath **out);

/**
 * Releases a path; null is ignored.
 *
 * # Safety
 * `path` must come from [`fracsde_fbm_sample`] and not be used afterwards.
 */
void fracsde_path_free(struct FracsdePath *path);

/**
 * Sets the scheme level `m ≤ fine_level` used by [`fracsde_scheme_run`].
 *
 * # Safety
 * `path` must be a live handle.
 */
enum FracsdeStatus fracsde_path_set_level(struct FracsdePath *path, uint32_t level);

/**
 * Node count of the fine grid, `2^fine_level + 1`.
 *
 * # Safety
 * `path` must be a live handle; `len` must be writable.
 */
enum FracsdeStatus fracsde_path_len(const struct FracsdePath *path, size_t *len);

/**
 * Copies the fine-grid values.
 *
 * # Safety
 * `path` must be a live handle; `buf` must hold `len` doubles.
 */
enum FracsdeStatus fracsde_path_values(const struct FracsdePath *path, double *buf, size_t len);

/**
 * Runs a scheme at the path's level; writes `2^level + 1` grid values.
 * `frozen` may be null; otherwise it receives whether the implicit
 * scheme kept the trajectory constant.
 *
 * # Safety
 * Handles must be live; `buf` must hold `len` doubles.
 */
enum FracsdeStatus fracsde_scheme_run(enum FracsdeScheme scheme,
                                      const struct FracsdeModel *model,
                                      double xi,
                                      const struct FracsdePath *path,
                                      double *buf,
                                      size_t len,
                                      bool *frozen);

/**
 * Exact solution driven by the piecewise-linear fine path; writes one
 * value per fine node.
 *
 * # Safety
 * Handles must be live; `buf` must hold `len` doubles.
 */
enum FracsdeStatus fracsde_reference_solve(const struct FracsdeModel *model,
                                           double xi,
                                           const struct FracsdePath *path,
                                           double *buf,
                                           size_t len);

/**
 * Convergence rate `γ` of the scheme at Hurst index `hurst`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FracsdeStatus fracsde_theoretical_rate(enum FracsdeScheme scheme, double hurst, double *out);

/**
 * `σ_{q,H}`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FracsdeStatus fracsde_sigma_qh(size_t q, double hurst, double *out);

/**
 * `σ̃_H`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FracsdeStatus fracsde_sigma_tilde(double hurst, double *out);

/**
 * Increment correlation `ρ_H(l)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FracsdeStatus fracsde_rho(double hurst, uint64_t lag, double *out);

/**
 * Trapezoid-kernel covariance `a(k, l)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FracsdeStatus fracsde_a_cov(double hurst, uint64_t k, uint64_t l, double *out);

/**
 * Cross covariance `a†(k, l)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FracsdeStatus fracsde_a_dagger(double hurst, uint64_t k, uint64_t l, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACSDE_H */
