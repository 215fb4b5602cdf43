/* C ABI for the eqlaw equilibrium portfolio library. */

#ifndef EQLAW_H
#define EQLAW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible call.
typedef enum EqlawStatus {
  EQLAW_STATUS_OK = 0,
  EQLAW_STATUS_NULL_POINTER = 1,
  EQLAW_STATUS_INVALID_ARGUMENT = 2,
  // The risk-premium budget exceeds what the preference can absorb.
  EQLAW_STATUS_INFEASIBLE = 3,
  // The lattice Picard iteration failed to contract.
  EQLAW_STATUS_DIVERGED = 4,
  EQLAW_STATUS_NUMERIC_ERROR = 5,
  EQLAW_STATUS_UNSUPPORTED = 6,
} EqlawStatus;

// Opaque lattice handle.
typedef struct EqlawLattice EqlawLattice;

// Opaque single-stock market handle with piecewise-constant coefficients.
typedef struct EqlawMarket EqlawMarket;

// Opaque preference handle.
typedef struct EqlawPreference EqlawPreference;

// Opaque weighted-utility lattice solution.
typedef struct EqlawWuSolution EqlawWuSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static C string.
const char *eqlaw_version(void);

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *eqlaw_last_error(void);

// Mixed power certainty equivalent with exponents in `(-1/eps0, 1-eps0)`.
// Pass `eps0 <= 0` for the default band parameter 0.05.
//
// # Safety
// `gammas` and `weights` must point to `n` readable doubles (weights may be
// null when `n == 1`).
struct EqlawPreference *eqlaw_pref_mixed_crra(const double *gammas,
                                              const double *weights,
                                              size_t n,
                                              double eps0);

// Exponential certainty equivalent with a finite mixture of absolute risk
// aversions.
//
// # Safety
// `rhos` and `weights` must point to `n` readable doubles (weights may be
// null when `n == 1`).
struct EqlawPreference *eqlaw_pref_cara(const double *rhos, const double *weights, size_t n);

struct EqlawPreference *eqlaw_pref_weighted_utility(double gamma, double rho);

struct EqlawPreference *eqlaw_pref_mean_variance(double gamma_mv);

// # Safety
// `pref` must come from an `eqlaw_pref_*` constructor and not be freed twice.
void eqlaw_pref_free(struct EqlawPreference *pref);

// Preference value of a discrete law given as parallel point/weight arrays.
//
// # Safety
// `points` and `weights` must point to `n` readable doubles; `out` must be
// a writable double.
enum EqlawStatus eqlaw_pref_evaluate_discrete(const struct EqlawPreference *pref,
                                              const double *points,
                                              const double *weights,
                                              size_t n,
                                              double *out);

struct EqlawMarket *eqlaw_market_scalar(double horizon, size_t n_steps, double theta, double sigma);

// Per-step coefficient curves, one entry per step.
//
// # Safety
// `theta` and `sigma` must point to `n_steps` readable doubles.
struct EqlawMarket *eqlaw_market_scalar_curves(double horizon,
                                               const double *theta,
                                               const double *sigma,
                                               size_t n_steps);

// # Safety
// `market` must come from an `eqlaw_market_*` constructor and not be freed
// twice.
void eqlaw_market_free(struct EqlawMarket *market);

// Solve the deterministic-coefficient equilibrium for the preference and
// write the per-step position into `pi_out` (length `n_steps`) and the
// cumulative variance into `big_a_out` (length `n_steps + 1`, may be null).
//
// # Safety
// Output buffers must be writable with the stated lengths.
enum EqlawStatus eqlaw_solve_equilibrium(const struct EqlawPreference *pref,
                                         const struct EqlawMarket *market,
                                         double *pi_out,
                                         double *big_a_out);

// Sup-norm of the first-order-condition residual of a per-step strategy.
//
// # Safety
// `pi` must point to `n_steps` readable doubles; `out` must be writable.
enum EqlawStatus eqlaw_foc_residual(const struct EqlawPreference *pref,
                                    const struct EqlawMarket *market,
                                    const double *pi,
                                    size_t n_steps,
                                    double *out);

// Analytic shrinking-window perturbation test at one `(t_index, phi)` cell:
// writes the verdict (0 consistent, 1 violated, 2 inconclusive) and the
// extrapolated gain limit.
//
// # Safety
// `pi` must point to `n_steps` readable doubles; outputs must be writable.
enum EqlawStatus eqlaw_perturbation_verdict(const struct EqlawPreference *pref,
                                            const struct EqlawMarket *market,
                                            const double *pi,
                                            size_t n_steps,
                                            size_t t_index,
                                            double phi,
                                            int *verdict_out,
                                            double *limit_out);

struct EqlawLattice *eqlaw_lattice_new(double horizon,
                                       size_t steps,
                                       double sigma,
                                       double kappa0,
                                       double eta,
                                       double s);

// # Safety
// `lattice` must come from `eqlaw_lattice_new` and not be freed twice.
void eqlaw_lattice_free(struct EqlawLattice *lattice);

// Solve the weighted-utility backward system on the lattice by Picard
// iteration and keep the solution behind an opaque handle.
//
// # Safety
// `lattice` must be a live handle from `eqlaw_lattice_new`.
struct EqlawWuSolution *eqlaw_solve_wu(double gamma,
                                       double rho,
                                       const struct EqlawLattice *lattice,
                                       double tol,
                                       size_t max_iter);

// # Safety
// `sol` must come from `eqlaw_solve_wu` and not be freed twice.
void eqlaw_wu_solution_free(struct EqlawWuSolution *sol);

// # Safety
// `sol` must be a live handle.
double eqlaw_wu_v_theta(const struct EqlawWuSolution *sol);

// # Safety
// `sol` must be a live handle.
double eqlaw_wu_bmo_norm(const struct EqlawWuSolution *sol);

// # Safety
// `sol` must be a live handle.
size_t eqlaw_wu_iterations(const struct EqlawWuSolution *sol);

// Strategy at a lattice node; NaN on bad indices.
//
// # Safety
// `sol` must be a live handle.
double eqlaw_wu_strategy_at(const struct EqlawWuSolution *sol, size_t level, size_t node);

// Log-moment field `Ybar_i` at a node (`which` selects 1 or 2); NaN on bad
// indices.
//
// # Safety
// `sol` must be a live handle.
double eqlaw_wu_ybar_at(const struct EqlawWuSolution *sol, int which, size_t level, size_t node);

// Sup-node first-order-condition residual of the extracted strategy.
//
// # Safety
// `sol` must be a live handle; `out` must be writable.
enum EqlawStatus eqlaw_wu_foc_residual(const struct EqlawWuSolution *sol, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EQLAW_H */
