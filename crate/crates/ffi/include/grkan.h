#ifndef GRKAN_H
#define GRKAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  GRKAN_STATUS_OK = 0,
  GRKAN_STATUS_NULL_POINTER = 1,
  GRKAN_STATUS_INVALID_ARGUMENT = 2,
  GRKAN_STATUS_LAYOUT_MISMATCH = 3,
  GRKAN_STATUS_NON_FINITE_INPUT = 4,
  GRKAN_STATUS_GRID_GEOMETRY_INVALID = 5,
  GRKAN_STATUS_COUNT_OVERFLOW = 6,
  GRKAN_STATUS_INTERNAL = 7,
  GRKAN_STATUS_PANIC = 8,
} GrkanStatus;

typedef enum {
  GRKAN_STRATEGY_NAIVE_ATOMIC = 0,
  GRKAN_STRATEGY_BLOCKED_REDUCTION = 1,
} GrkanStrategy;

typedef enum {
  GRKAN_LAYER_KIND_MLP = 0,
  GRKAN_LAYER_KIND_KAN = 1,
  GRKAN_LAYER_KIND_GRKAN = 2,
} GrkanLayerKind;

/**
 * Group-rational activation with its coefficients held in both precisions.
 */
typedef struct GrkanRational GrkanRational;

/**
 * Inputs of the cost table. Fields a row does not use are ignored.
 */
typedef struct {
  uint64_t d_in;
  uint64_t d_out;
  uint64_t func_flops;
  uint64_t spline_order;
  uint64_t intervals;
  uint64_t m;
  uint64_t n;
  uint64_t groups;
} GrkanFlopsConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *grkan_last_error_message(void);

/**
 * Static, nul-terminated name of a status code.
 */
const char *grkan_status_name(GrkanStatus status);

/**
 * Creates a handle for `num_groups` groups over `feature_dim` channels.
 *
 * `numerator` holds `num_groups * num_coeffs` values and `denominator`
 * `num_groups * den_coeffs`, both row-major by group.
 *
 * # Safety
 * The coefficient pointers must be valid for the stated lengths and `out`
 * must be writable. Release the handle with [`grkan_rational_free`].
 */
GrkanStatus grkan_rational_new(size_t feature_dim,
                               size_t num_groups,
                               size_t num_coeffs,
                               size_t den_coeffs,
                               const double *numerator,
                               const double *denominator,
                               GrkanRational **out);

/**
 * # Safety
 * `h` must come from [`grkan_rational_new`] and not be used afterwards.
 * Null is accepted.
 */
void grkan_rational_free(GrkanRational *h);

/**
 * `y = F(x)` over a `batch × seq × feature_dim` row-major tensor.
 *
 * # Safety
 * `h` must be a live handle; `x` and `y` must each hold
 * `batch * seq * feature_dim` values.
 */
GrkanStatus grkan_rational_forward_f32(const GrkanRational *h,
                                       const float *x,
                                       size_t batch,
                                       size_t seq,
                                       float *y);

/**
 * # Safety
 * As [`grkan_rational_forward_f32`].
 */
GrkanStatus grkan_rational_forward_f64(const GrkanRational *h,
                                       const double *x,
                                       size_t batch,
                                       size_t seq,
                                       double *y);

/**
 * Backward pass. Writes the input gradient (`batch * seq * feature_dim`)
 * and the coefficient gradients (`num_groups * num_coeffs` and
 * `num_groups * den_coeffs`). `workers == 0` uses the default pool.
 *
 * # Safety
 * `h` must be a live handle and every pointer valid for its length.
 */
GrkanStatus grkan_rational_backward_f32(const GrkanRational *h,
                                        const float *x,
                                        const float *upstream,
                                        size_t batch,
                                        size_t seq,
                                        GrkanStrategy strategy,
                                        size_t block_size,
                                        size_t workers,
                                        float *d_x,
                                        float *d_a,
                                        float *d_b);

/**
 * # Safety
 * As [`grkan_rational_backward_f32`].
 */
GrkanStatus grkan_rational_backward_f64(const GrkanRational *h,
                                        const double *x,
                                        const double *upstream,
                                        size_t batch,
                                        size_t seq,
                                        GrkanStrategy strategy,
                                        size_t block_size,
                                        size_t workers,
                                        double *d_x,
                                        double *d_a,
                                        double *d_b);

/**
 * Predicted global accesses of the naive strategy.
 *
 * # Safety
 * `out` must be writable.
 */
GrkanStatus grkan_predict_accesses_naive(uint64_t batch,
                                         uint64_t seq,
                                         uint64_t dim,
                                         uint64_t coeffs,
                                         uint64_t *out);

/**
 * Predicted global accesses of the blocked strategy.
 *
 * # Safety
 * `out` must be writable.
 */
GrkanStatus grkan_predict_accesses_blocked(uint64_t batch,
                                           uint64_t seq,
                                           uint64_t dim,
                                           uint64_t block_size,
                                           uint64_t group_width,
                                           uint64_t coeffs,
                                           uint64_t *out);

/**
 * Parameter count and FLOPs of one cost-table row.
 *
 * # Safety
 * `cfg` must be readable; `params` and `flops` writable.
 */
GrkanStatus grkan_flops(GrkanLayerKind kind,
                        const GrkanFlopsConfig *cfg,
                        uint64_t *params,
                        uint64_t *flops);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRKAN_H */
