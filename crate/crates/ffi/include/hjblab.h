#ifndef HJBLAB_H
#define HJBLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum HjbStatus {
  HJB_STATUS_OK = 0,
  HJB_STATUS_NULL_POINTER = 1,
  HJB_STATUS_INVALID_UTF8 = 2,
  HJB_STATUS_CONFIG = 3,
  HJB_STATUS_LENGTH_MISMATCH = 4,
  HJB_STATUS_NUMERICAL = 5,
  HJB_STATUS_ASSERTION = 6,
  HJB_STATUS_PANIC = 7,
} HjbStatus;

typedef enum HjbVerdict {
  HJB_VERDICT_SOLVABLE = 0,
  HJB_VERDICT_NO_SOLUTION = 1,
  HJB_VERDICT_INCONCLUSIVE = 2,
} HjbVerdict;

// Opaque problem handle.
typedef struct HjbProblem HjbProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. Owned by the library.
const char *hjb_last_error(void);

// Library version as a static NUL-terminated string.
const char *hjb_version(void);

// Builds a problem from config text with `[operator]`, `[domain]` and
// optional `h`, `[solver]`, `[eigen]` and `[ap]` entries. `kind` is ignored.
//
// # Safety
// `config` must be a NUL-terminated string and `out` a valid pointer.
enum HjbStatus hjb_problem_new(const char *config, struct HjbProblem **out);

// Releases a handle; null is accepted.
//
// # Safety
// `p` must come from [`hjb_problem_new`] and not be used afterwards.
void hjb_problem_free(struct HjbProblem *p);

// Number of interior nodes, 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
uintptr_t hjb_problem_len(const struct HjbProblem *p);

// Spatial dimension, 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
uintptr_t hjb_problem_dim(const struct HjbProblem *p);

// Node coordinates, row-major with `len == nodes * dim`.
//
// # Safety
// `out` must hold `len` doubles.
enum HjbStatus hjb_problem_nodes(const struct HjbProblem *p, double *out, uintptr_t len);

// Half-eigenvalues of the asymptotic operator.
//
// # Safety
// Both outputs must be valid pointers.
enum HjbStatus hjb_problem_eigenvalues(const struct HjbProblem *p,
                                       double *lambda_plus,
                                       double *lambda_minus);

// Positive principal eigenfunction; the forcing is `h + t·phi`.
//
// # Safety
// `out` must hold `len` doubles.
enum HjbStatus hjb_problem_phi(const struct HjbProblem *p, double *out, uintptr_t len);

// Evaluates the discrete operator at every node.
//
// # Safety
// `u` and `out` must each hold `len` doubles.
enum HjbStatus hjb_problem_apply(const struct HjbProblem *p,
                                 const double *u,
                                 double *out,
                                 uintptr_t len);

// Decides whether the problem with forcing `h + t·φ` has a solution.
//
// # Safety
// `verdict` must be a valid pointer.
enum HjbStatus hjb_problem_solvable(const struct HjbProblem *p, double t, enum HjbVerdict *verdict);

// Solvability threshold located to within `tol`.
//
// # Safety
// `t_star` must be a valid pointer.
enum HjbStatus hjb_problem_tstar(const struct HjbProblem *p, double tol, double *t_star);

// Distinct solutions at `t`. `count` receives the total found; the first
// `min(count, capacity)` are written back to back into `out`, which holds
// `capacity * hjb_problem_len(p)` doubles. `out` may be null when `capacity` is 0.
//
// # Safety
// `out` must hold the stated number of doubles and `count` be valid.
enum HjbStatus hjb_problem_census(const struct HjbProblem *p,
                                  double t,
                                  uintptr_t n_starts,
                                  uint64_t seed,
                                  double *out,
                                  uintptr_t capacity,
                                  uintptr_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJBLAB_H */
