#ifndef SAMBO_H
#define SAMBO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SamboStatus {
  SAMBO_STATUS_OK = 0,
  SAMBO_STATUS_NULL_POINTER = 1,
  SAMBO_STATUS_INVALID_INPUT = 2,
  SAMBO_STATUS_SHAPE_MISMATCH = 3,
  SAMBO_STATUS_SUPPORT_VIOLATION = 4,
  SAMBO_STATUS_ENUMERATION_TOO_LARGE = 5,
  SAMBO_STATUS_CONFIG = 6,
  SAMBO_STATUS_IO = 7,
  SAMBO_STATUS_PANIC = 8,
  SAMBO_STATUS_OTHER = 9,
} SamboStatus;

// Direction of a biased grid model.
typedef enum SamboBias {
  SAMBO_BIAS_OVERESTIMATING = 0,
  SAMBO_BIAS_UNDERESTIMATING = 1,
} SamboBias;

// Transition kernel, e.g. a learned or biased model.
typedef struct SamboKernel SamboKernel;

// Finite discounted MDP.
typedef struct SamboMdp SamboMdp;

// Tabular softmax policy.
typedef struct SamboPolicy SamboPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *sambo_last_error(void);

// Build an MDP from a `[S][A][S]` kernel, `[S][A]` reward and `[S]` start law.
//
// # Safety
// Each array must hold the stated number of readable doubles; `out` must be
// writable.
enum SamboStatus sambo_mdp_new(size_t n_states,
                               size_t n_actions,
                               const double *kernel,
                               const double *reward,
                               const double *mu0,
                               double gamma,
                               struct SamboMdp **out);

// The default 5-cell grid world.
//
// # Safety
// `out` must be writable.
enum SamboStatus sambo_grid_default(struct SamboMdp **out);

// A custom grid: `n_placements` reward sites given as parallel arrays.
//
// # Safety
// `states` and `rewards` must hold `n_placements` entries; `out` must be
// writable.
enum SamboStatus sambo_grid_new(size_t n_cells,
                                double base_reward,
                                double gamma,
                                const size_t *states,
                                const double *rewards,
                                size_t n_placements,
                                struct SamboMdp **out);

// # Safety
// `mdp` must come from a `sambo_*` constructor and not be freed twice.
void sambo_mdp_free(struct SamboMdp *mdp);

// Number of states, or 0 for a null handle.
//
// # Safety
// `mdp` must be null or a live handle.
size_t sambo_mdp_n_states(const struct SamboMdp *mdp);

// Number of actions, or 0 for a null handle.
//
// # Safety
// `mdp` must be null or a live handle.
size_t sambo_mdp_n_actions(const struct SamboMdp *mdp);

// # Safety
// `probs` must hold `S*A*S` doubles; `out` must be writable.
enum SamboStatus sambo_kernel_new(size_t n_states,
                                  size_t n_actions,
                                  const double *probs,
                                  struct SamboKernel **out);

// Copy of the MDP's true kernel.
//
// # Safety
// `mdp` must be live; `out` must be writable.
enum SamboStatus sambo_mdp_kernel(const struct SamboMdp *mdp, struct SamboKernel **out);

// The MDP's kernel mixed toward an over- or undershooting successor.
//
// # Safety
// `mdp` must be live; `out` must be writable.
enum SamboStatus sambo_biased_model(const struct SamboMdp *mdp,
                                    size_t target,
                                    enum SamboBias kind,
                                    double epsilon,
                                    struct SamboKernel **out);

// # Safety
// `kernel` must come from a `sambo_*` constructor and not be freed twice.
void sambo_kernel_free(struct SamboKernel *kernel);

// Softmax policy from `[S][A]` logits.
//
// # Safety
// `logits` must hold `S*A` doubles; `out` must be writable.
enum SamboStatus sambo_policy_new(size_t n_states,
                                  size_t n_actions,
                                  const double *logits,
                                  struct SamboPolicy **out);

// # Safety
// `out` must be writable.
enum SamboStatus sambo_policy_uniform(size_t n_states, size_t n_actions, struct SamboPolicy **out);

// # Safety
// `policy` must come from a `sambo_*` constructor and not be freed twice.
void sambo_policy_free(struct SamboPolicy *policy);

// Action probabilities as an `[S][A]` table.
//
// # Safety
// `policy` must be live; `out` must hold `len` writable doubles.
enum SamboStatus sambo_policy_probs(const struct SamboPolicy *policy, double *out, size_t len);

// `V` into `values` (`S` entries) and `Q` into `q` (`S*A` entries). Either
// output may be null to skip it.
//
// # Safety
// Handles must be live; non-null outputs must hold the stated lengths.
enum SamboStatus sambo_policy_evaluate(const struct SamboMdp *mdp,
                                       const struct SamboPolicy *policy,
                                       double tol,
                                       double *values,
                                       size_t values_len,
                                       double *q,
                                       size_t q_len);

// Expected discounted return from the start law.
//
// # Safety
// Handles must be live; `out` must be writable.
enum SamboStatus sambo_expected_return(const struct SamboMdp *mdp,
                                       const struct SamboPolicy *policy,
                                       double *out);

// Normalized discounted state-action occupancy, `[S][A]`.
//
// # Safety
// Handles must be live; `out` must hold `len` writable doubles.
enum SamboStatus sambo_occupancy(const struct SamboMdp *mdp,
                                 const struct SamboPolicy *policy,
                                 double *out,
                                 size_t len);

// Return of the best deterministic policy; its actions go to `actions`
// when non-null.
//
// # Safety
// `mdp` must be live; `out` writable; `actions`, if non-null, holds `len`
// writable entries.
enum SamboStatus sambo_optimal_return(const struct SamboMdp *mdp,
                                      double *out,
                                      size_t *actions,
                                      size_t len);

// `Σ_s w(s) KL(π(·|s) ‖ π_b(·|s))`.
//
// # Safety
// Handles must be live; `weights` holds `len` doubles; `out` writable.
enum SamboStatus sambo_kl_policies(const struct SamboPolicy *pi,
                                   const struct SamboPolicy *pi_b,
                                   const double *weights,
                                   size_t len,
                                   double *out);

// Translated reward `max(floor, r - c (r_max - r_min) + 1e-8)`.
double sambo_translate_reward(double r, double r_max, double r_min, double c, double floor);

// Lower-bound check at horizon `horizon`: writes `lhs - rhs` to `margin`
// and whether it clears `-tol` to `passed`.
//
// # Safety
// Handles must be live; `margin` and `passed` must be writable.
enum SamboStatus sambo_check_theorem1(const struct SamboMdp *mdp,
                                      const struct SamboKernel *q,
                                      const struct SamboPolicy *pi,
                                      const struct SamboPolicy *pi_c,
                                      size_t horizon,
                                      double tol,
                                      double *margin,
                                      bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAMBO_H */
