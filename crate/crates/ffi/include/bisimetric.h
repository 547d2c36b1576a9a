#ifndef BISIMETRIC_H
#define BISIMETRIC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Which fixpoint to compute.
 */
typedef enum BsmFunctional {
  /*
   Kernel functional, least fixpoint of the kernel pseudometric.
   */
  BSM_FUNCTIONAL_KERNEL = 0,
  /*
   Trajectory functional, least fixpoint of the trajectory pseudometric.
   */
  BSM_FUNCTIONAL_TRAJECTORY = 1,
} BsmFunctional;

/*
 Status codes returned by every function.
 */
typedef enum BsmStatus {
  BSM_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  BSM_STATUS_NULL_POINTER = 1,
  /*
   A string argument was not valid UTF-8.
   */
  BSM_STATUS_INVALID_UTF8 = 2,
  /*
   Invalid configuration, formula or parameter.
   */
  BSM_STATUS_INVALID_INPUT = 3,
  /*
   A mathematical invariant failed (honesty, pseudometric or distribution axioms).
   */
  BSM_STATUS_INVARIANT_VIOLATION = 4,
  /*
   Solver, shape or I/O failure.
   */
  BSM_STATUS_INTERNAL = 5,
  /*
   An index or buffer length was out of range.
   */
  BSM_STATUS_OUT_OF_RANGE = 6,
  /*
   The library panicked; the handle arguments should be considered unusable.
   */
  BSM_STATUS_PANIC = 7,
} BsmStatus;

/*
 A square matrix of pseudometric values.
 */
typedef struct BsmMatrix BsmMatrix;

/*
 A resolved process model with its time grid and run settings.
 */
typedef struct BsmModel BsmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null if it succeeded.

 The string stays valid until the next call into the library on this thread.
 */
const char *bsm_last_error_message(void);

/*
 Parses and resolves a JSON run configuration into a model handle.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BsmStatus bsm_model_from_json(const char *json, struct BsmModel **out);

/*
 Releases a model handle. Null is ignored.

 # Safety
 `model` must be null or a handle from [`bsm_model_from_json`] not yet freed.
 */
void bsm_model_free(struct BsmModel *model);

/*
 Number of states of the model's finite state space.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum BsmStatus bsm_model_num_states(const struct BsmModel *model, size_t *out);

/*
 Iterates the chosen functional to its fixpoint with the model's configured
 discount, tolerance, iteration cap and path mode.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum BsmStatus bsm_fixpoint(const struct BsmModel *model,
                            enum BsmFunctional functional,
                            struct BsmMatrix **out);

/*
 Side length of a matrix.

 # Safety
 `matrix` must be a live handle and `out` a valid pointer.
 */
enum BsmStatus bsm_matrix_size(const struct BsmMatrix *matrix, size_t *out);

/*
 Entry `(x, y)` of a matrix.

 # Safety
 `matrix` must be a live handle and `out` a valid pointer.
 */
enum BsmStatus bsm_matrix_get(const struct BsmMatrix *matrix, size_t x, size_t y, double *out);

/*
 Copies all entries, row-major, into `buf`, which must hold `size * size` values.

 # Safety
 `matrix` must be a live handle and `buf` must hold `len` writable values.
 */
enum BsmStatus bsm_matrix_copy(const struct BsmMatrix *matrix, double *buf, size_t len);

/*
 Releases a matrix handle. Null is ignored.

 # Safety
 `matrix` must be null or a handle from this library not yet freed.
 */
void bsm_matrix_free(struct BsmMatrix *matrix);

/*
 Optimal transport cost between `mu` (length `m`) and `nu` (length `n`)
 under the row-major `m x n` cost matrix `cost`, whose entries lie in `[0, 1]`.

 # Safety
 The arrays must hold `m`, `n` and `m * n` values; `out` must be valid.
 */
enum BsmStatus bsm_solve_ot(const double *mu,
                            size_t m,
                            const double *nu,
                            size_t n,
                            const double *cost,
                            double *out);

/*
 Evaluates a state formula at every state; `out` must hold `len` values,
 `len` equal to the number of states.

 # Safety
 `model` must be a live handle, `formula` NUL-terminated and `out` hold `len` values.
 */
enum BsmStatus bsm_formula_eval(const struct BsmModel *model,
                                const char *formula,
                                double *out,
                                size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BISIMETRIC_H */
