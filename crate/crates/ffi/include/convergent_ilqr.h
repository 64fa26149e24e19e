#ifndef CONVERGENT_ILQR_H
#define CONVERGENT_ILQR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum {
  CI_STATUS_OK = 0,
  CI_STATUS_NULL_POINTER = 1,
  CI_STATUS_INVALID_ARGUMENT = 2,
  CI_STATUS_CONFIG = 3,
  CI_STATUS_SOLVER = 4,
  CI_STATUS_BUFFER_TOO_SMALL = 5,
  CI_STATUS_PANIC = 6,
} CiStatus;

/**
 * Benchmark model selector.
 */
typedef enum {
  CI_MODEL_HOPPER = 0,
  CI_MODEL_QUADRUPED = 1,
} CiModel;

/**
 * Solver variant.
 */
typedef enum {
  CI_MODE_VANILLA = 0,
  CI_MODE_CONVERGENT = 1,
} CiMode;

/**
 * A benchmark task with its initial guess and rollout settings.
 */
typedef struct CiProblem CiProblem;

/**
 * A solved trajectory with its tracking gains.
 */
typedef struct CiSolution CiSolution;

/**
 * Scalar results of a solve.
 */
typedef struct {
  double cost;
  double j_chi;
  double chi;
  size_t iterations;
  size_t events;
} CiSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call on the same thread.
 */
const char *ci_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ci_version(void);

/**
 * Creates the default task of `model` for weight setting `weight_trial`
 * (0-based).
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
CiStatus ci_problem_new(CiModel model, size_t weight_trial, CiProblem **out);

/**
 * Creates a task from experiment-config TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid handle slot.
 */
CiStatus ci_problem_from_toml(const char *toml, size_t weight_trial, CiProblem **out);

/**
 * # Safety
 * `problem` must come from a `ci_problem_*` constructor and not be used
 * afterwards. Null is ignored.
 */
void ci_problem_free(CiProblem *problem);

/**
 * State dimension, input dimension and knot steps of a task.
 *
 * # Safety
 * `problem` must be a live handle; output pointers may be null.
 */
CiStatus ci_problem_dims(const CiProblem *problem, size_t *n, size_t *m, size_t *steps);

/**
 * Solves the task from its built-in initial guess. `max_iterations = 0`
 * keeps the configured limit.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid handle slot.
 */
CiStatus ci_solve(const CiProblem *problem, CiMode mode, size_t max_iterations, CiSolution **out);

/**
 * # Safety
 * `solution` must come from `ci_solve` and not be used afterwards.
 * Null is ignored.
 */
void ci_solution_free(CiSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle and `out` valid.
 */
CiStatus ci_solution_summary(const CiSolution *solution, CiSummary *out);

/**
 * Knot states, `(steps + 1) × n`.
 *
 * # Safety
 * `buf` must hold `len` doubles; `written` may be null.
 */
CiStatus ci_solution_states(const CiSolution *solution, double *buf, size_t len, size_t *written);

/**
 * Nominal inputs, `steps × m`.
 *
 * # Safety
 * `buf` must hold `len` doubles; `written` may be null.
 */
CiStatus ci_solution_inputs(const CiSolution *solution, double *buf, size_t len, size_t *written);

/**
 * Tracking gains `K_i`, `steps × m × n`, each gain row-major.
 *
 * # Safety
 * `buf` must hold `len` doubles; `written` may be null.
 */
CiStatus ci_solution_gains(const CiSolution *solution, double *buf, size_t len, size_t *written);

/**
 * Closed-loop rollout from the nominal start offset by `dx0` (length n)
 * under the solution's tracking gains. Writes the error ratio and the
 * feedback effort; a divergent rollout yields infinities and `Ok`.
 *
 * # Safety
 * Both handles must be live, `dx0` must hold `n` doubles, outputs may be
 * null.
 */
CiStatus ci_perturbed_rollout(const CiProblem *problem,
                              const CiSolution *solution,
                              const double *dx0,
                              size_t n,
                              double *error_ratio,
                              double *feedback_effort);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVERGENT_ILQR_H */
