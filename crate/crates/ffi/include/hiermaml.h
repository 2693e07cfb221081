#ifndef HIERMAML_H
#define HIERMAML_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 4 match the command-line exit codes.
 */
enum HmStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  HM_STATUS_OK = 0,
  HM_STATUS_NULL_POINTER = 1,
  HM_STATUS_INVALID_ARGUMENT = 2,
  HM_STATUS_DATA_ERROR = 3,
  HM_STATUS_DIVERGENCE = 4,
  HM_STATUS_IO_ERROR = 5,
  HM_STATUS_FORMAT_ERROR = 6,
  HM_STATUS_PANIC = 7,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum HmStatus HmStatus;
#else
typedef int32_t HmStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque task hierarchy.
 */
typedef struct HmHierarchy HmHierarchy;

/**
 * Opaque predictive model.
 */
typedef struct HmModel HmModel;

/**
 * Routing decision for one task.
 */
typedef struct HmRoute {
  /**
   * Layer that decided the route, starting at 1.
   */
  size_t layer;
  /**
   * 1 when the task ended at the deepest hard model, 0 for an easy model.
   */
  int32_t hard;
  /**
   * Routing R² at the deciding layer.
   */
  double routing_r2;
  /**
   * Query R² of the selected model after adaptation; −inf on divergence.
   */
  double r2;
} HmRoute;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hm_version(void);

/**
 * Message of the last failure on this thread; empty when none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hm_last_error(void);

/**
 * Freshly initialized model with the default head.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
HmStatus hm_model_new(size_t n_features,
                      size_t seq_len,
                      size_t hidden,
                      uint64_t seed,
                      struct HmModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
HmStatus hm_model_load(const char *path_, struct HmModel **out);

/**
 * # Safety
 * `model` must come from `hm_model_new` or `hm_model_load`; `path` must be
 * a NUL-terminated string.
 */
HmStatus hm_model_save(const struct HmModel *model, const char *path_);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void hm_model_free(struct HmModel *model);

/**
 * Number of trainable parameters; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t hm_model_param_count(const struct HmModel *model);

/**
 * Values per window (T·F); 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t hm_model_window_len(const struct HmModel *model);

/**
 * Predicts `n_windows` row-major T×F windows laid out back to back in
 * `windows`; writes `n_windows` values to `out`.
 *
 * # Safety
 * `windows` must hold `n_windows · window_len` values and `out` room for
 * `n_windows`.
 */
HmStatus hm_model_predict(const struct HmModel *model,
                          const double *windows,
                          size_t n_windows,
                          double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
HmStatus hm_hierarchy_load(const char *path_, struct HmHierarchy **out);

/**
 * # Safety
 * `hierarchy` must be NULL or a handle not yet freed.
 */
void hm_hierarchy_free(struct HmHierarchy *hierarchy);

/**
 * Number of layers; 0 for NULL.
 *
 * # Safety
 * `hierarchy` must be NULL or a live handle.
 */
size_t hm_hierarchy_depth(const struct HmHierarchy *hierarchy);

/**
 * Routes one task through the hierarchy, adapting with `alpha` for `steps`
 * SGD steps. Writes the decision to `out` and, when `predictions` is not
 * NULL, the selected model's adapted query predictions (`n_query` values).
 *
 * # Safety
 * Window buffers must hold `n · window_len` values, label buffers `n`
 * values, `out` must be writable and `predictions` NULL or room for
 * `n_query` values.
 */
HmStatus hm_hierarchy_route(const struct HmHierarchy *hierarchy,
                            const double *support_windows,
                            const double *support_labels,
                            size_t n_support,
                            const double *query_windows,
                            const double *query_labels,
                            size_t n_query,
                            double alpha,
                            size_t steps,
                            struct HmRoute *out,
                            double *predictions);

/**
 * Variance-minimizing threshold over `values` with window bounds `a < b`.
 * Writes γ and the split index into the ascending order.
 *
 * # Safety
 * `values` must hold `n` values; `gamma` and `split_index` must be writable.
 */
HmStatus hm_select_threshold(const double *values,
                             size_t n,
                             double a,
                             double b,
                             double *gamma,
                             size_t *split_index);

/**
 * Coefficient of determination of `predictions` against `labels`.
 *
 * # Safety
 * Both buffers must hold `n` values; `out` must be writable.
 */
HmStatus hm_r_squared(const double *labels, const double *predictions, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIERMAML_H */
