#ifndef WRMDP_H
#define WRMDP_H

/* Generated by cbindgen from wrmdp-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum WrmdpStatus {
  WRMDP_STATUS_OK = 0,
  WRMDP_STATUS_NULL_POINTER = 1,
  WRMDP_STATUS_PARSE_ERROR = 2,
  WRMDP_STATUS_INVALID_ARGUMENT = 3,
  WRMDP_STATUS_SOLVE_FAILED = 4,
  WRMDP_STATUS_PANIC = 5,
} WrmdpStatus;

/**
 * Opaque MDP handle.
 */
typedef struct WrmdpModel WrmdpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message for the calling thread into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length in bytes (excluding the NUL), so callers can detect truncation.
 * Passing a null buffer or zero capacity just queries the length.
 */
size_t wrmdp_last_error_message(char *buf, size_t cap);

/**
 * Parses a model from the library's JSON document
 * (`{"coords", "actions", "kernel", "cost"}`) and stores a handle in `out`.
 * The handle must be released with `wrmdp_model_free`.
 */
enum WrmdpStatus wrmdp_model_from_json(const char *json, struct WrmdpModel **out);

/**
 * Releases a model handle. Passing null is a no-op.
 */
void wrmdp_model_free(struct WrmdpModel *model);

/**
 * Number of states, or 0 for a null handle.
 */
size_t wrmdp_model_n_states(const struct WrmdpModel *model);

/**
 * Number of actions, or 0 for a null handle.
 */
size_t wrmdp_model_n_actions(const struct WrmdpModel *model);

/**
 * Solves the discounted problem. `out_values` and `out_policy` must hold
 * `wrmdp_model_n_states(model)` entries; either may be null to skip it.
 * `out_residual` receives the final fixed-point residual when non-null.
 */
enum WrmdpStatus wrmdp_solve_discounted(const struct WrmdpModel *model,
                                        double beta,
                                        double tol,
                                        double *out_values,
                                        size_t *out_policy,
                                        double *out_residual);

/**
 * Solves the average-cost problem under the minorization certificate
 * `kernel >= epsilon * rho`. `rho` must hold one weight per state;
 * `out_h` and `out_policy` need `wrmdp_model_n_states(model)` entries and
 * may be null to skip. The optimal gain lands in `out_gain` when non-null.
 */
enum WrmdpStatus wrmdp_solve_average(const struct WrmdpModel *model,
                                     double epsilon,
                                     const double *rho,
                                     double tol,
                                     double *out_gain,
                                     double *out_h,
                                     size_t *out_policy);

/**
 * First Wasserstein distance between two weighted point sets on the line.
 * Weights must be nonnegative and sum to one within the library tolerance.
 */
enum WrmdpStatus wrmdp_w1_1d(const double *points_a,
                             const double *weights_a,
                             size_t len_a,
                             const double *points_b,
                             const double *weights_b,
                             size_t len_b,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WRMDP_H */
