#ifndef PARAPREC_H
#define PARAPREC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PpStatus {
  PP_STATUS_OK = 0,
  PP_STATUS_NULL_POINTER = 1,
  PP_STATUS_INVALID_ARGUMENT = 2,
  PP_STATUS_DIMENSION = 3,
  PP_STATUS_SINGULAR_OPERATOR = 4,
  PP_STATUS_SKETCH_TOO_SMALL = 5,
  PP_STATUS_KAPPA_TOO_SMALL = 6,
  PP_STATUS_CONVERGENCE_FAILURE = 7,
  PP_STATUS_NUMERICAL = 8,
  PP_STATUS_IO = 9,
  PP_STATUS_PANIC = 10,
} PpStatus;

typedef enum PpSketchKind {
  PP_SKETCH_KIND_RESCALED_PARTIAL_HADAMARD = 0,
  PP_SKETCH_KIND_RESCALED_RADEMACHER = 1,
  PP_SKETCH_KIND_PSRHT = 2,
} PpSketchKind;

/**
 * Opaque interpolated-inverse preconditioner.
 */
typedef struct PpPreconditioner PpPreconditioner;

/**
 * Opaque parametric problem.
 */
typedef struct PpProblem PpProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *pp_last_error_message(void);

/**
 * Minimal K for the given sketch distribution.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum PpStatus pp_sketch_min_columns(enum PpSketchKind kind,
                                    size_t n,
                                    size_t m,
                                    double ratio,
                                    double delta,
                                    uint64_t *out);

/**
 * Advection-diffusion-reaction benchmark on a periodic `mesh_side`² grid.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum PpStatus pp_problem_adr_new(size_t mesh_side, double advection, struct PpProblem **out);

/**
 * # Safety
 * `p` must come from `pp_problem_adr_new` (or be NULL) and not be used afterwards.
 */
void pp_problem_free(struct PpProblem *p);

/**
 * # Safety
 * `p` must be a live problem handle or NULL (returns 0).
 */
size_t pp_problem_dim(const struct PpProblem *p);

/**
 * # Safety
 * `p` must be a live problem handle or NULL (returns 0).
 */
size_t pp_problem_param_dim(const struct PpProblem *p);

/**
 * Number of points of the problem's training grid.
 *
 * # Safety
 * `p` must be a live problem handle or NULL (returns 0).
 */
size_t pp_problem_grid_len(const struct PpProblem *p);

/**
 * Greedy preconditioner with `m` points. `seed_point` (length param_dim) may be NULL.
 * `constraint` is "none", "nonneg", "kappa:<value>" or NULL (= none).
 *
 * # Safety
 * Pointers must be valid; `seed_point` must hold `param_dim` values when non-NULL.
 */
enum PpStatus pp_precond_greedy(const struct PpProblem *problem,
                                enum PpSketchKind kind,
                                size_t columns,
                                uint64_t sketch_seed,
                                const char *constraint,
                                size_t m,
                                const double *seed_point,
                                struct PpPreconditioner **out);

/**
 * Preconditioner from `count` fixed points stored row-wise in `points` (count × param_dim).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum PpStatus pp_precond_from_points(const struct PpProblem *problem,
                                     enum PpSketchKind kind,
                                     size_t columns,
                                     uint64_t sketch_seed,
                                     const char *constraint,
                                     const double *points,
                                     size_t count,
                                     struct PpPreconditioner **out);

/**
 * # Safety
 * `p` must come from a preconditioner constructor (or be NULL) and not be used afterwards.
 */
void pp_precond_free(struct PpPreconditioner *p);

/**
 * Number of interpolation points.
 *
 * # Safety
 * `p` must be a live handle or NULL (returns 0).
 */
size_t pp_precond_len(const struct PpPreconditioner *p);

/**
 * Copies the interpolation points (len × param_dim, row-wise) into `out`.
 *
 * # Safety
 * `out` must hold `capacity` values.
 */
enum PpStatus pp_precond_points(const struct PpPreconditioner *p, double *out, size_t capacity);

/**
 * Interpolation weights λ(ξ) (length = number of points).
 *
 * # Safety
 * `xi` must hold param_dim values, `out` must hold `len` values.
 */
enum PpStatus pp_precond_weights(const struct PpPreconditioner *p,
                                 const double *xi,
                                 double *out,
                                 size_t len);

/**
 * y = P(ξ)x, or P(ξ)ᵀx when `transpose` is nonzero.
 *
 * # Safety
 * `xi` holds param_dim values; `x` and `y` hold `n` values each.
 */
enum PpStatus pp_precond_apply(const struct PpPreconditioner *p,
                               const double *xi,
                               const double *x,
                               double *y,
                               size_t n,
                               int32_t transpose);

/**
 * Sketched residual ‖(I − P(ξ)A(ξ))V‖_F.
 *
 * # Safety
 * `xi` holds param_dim values; `out` valid for a write.
 */
enum PpStatus pp_precond_residual(const struct PpPreconditioner *p, const double *xi, double *out);

/**
 * Shepard inverse-distance weights of `xi` w.r.t. `count` points (row-wise, `d` each).
 *
 * # Safety
 * `points` holds count·d values, `xi` holds d values, `out` holds count values.
 */
enum PpStatus pp_shepard_weights(const double *xi,
                                 const double *points,
                                 size_t count,
                                 size_t d,
                                 double s,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARAPREC_H */
