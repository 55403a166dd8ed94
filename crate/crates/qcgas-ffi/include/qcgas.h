#ifndef QCGAS_H
#define QCGAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes: 0 success, 1 invalid input, 2 numerical rejection,
 * 3 null argument, 4 internal panic.
 */
typedef enum QcgStatus {
  QCG_STATUS_OK = 0,
  QCG_STATUS_INVALID = 1,
  QCG_STATUS_NUMERICAL = 2,
  QCG_STATUS_NULL_ARGUMENT = 3,
  QCG_STATUS_PANIC = 4,
} QcgStatus;

/**
 * Opaque ensemble handle: box, fugacity, temperature, energy model.
 */
typedef struct QcgEnsemble QcgEnsemble;

/**
 * Opaque two-body potential handle.
 */
typedef struct QcgPotential QcgPotential;

/**
 * Superstability constants at one cube edge.
 */
typedef struct QcgStabilityConstants {
  double edge;
  /**
   * In-cube repulsion infimum b(a) (NaN when not derived via pairs).
   */
  double b;
  /**
   * Upper bound on the lattice attraction sum (NaN when not applicable).
   */
  double upsilon0;
  double big_a;
  double big_b;
  uint32_t m;
} QcgStabilityConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *qcg_last_error(void);

/**
 * `φ(r) = φ₀ / r^s`, purely repulsive.
 */
enum QcgStatus qcg_potential_inverse_power(uintptr_t dim,
                                           double phi0,
                                           double s,
                                           struct QcgPotential **out);

/**
 * `+∞` below the diameter `sigma`, 0 beyond.
 */
enum QcgStatus qcg_potential_hard_core(uintptr_t dim, double sigma, struct QcgPotential **out);

/**
 * Hard core of diameter `sigma` with a square well of the given depth out
 * to `range`.
 */
enum QcgStatus qcg_potential_hard_core_plus_well(uintptr_t dim,
                                                 double sigma,
                                                 double depth,
                                                 double range,
                                                 struct QcgPotential **out);

/**
 * `φ(r) = φ₀/r^s − φ₁ e^{−κ r}`.
 */
enum QcgStatus qcg_potential_power_core_exp_tail(uintptr_t dim,
                                                 double phi0,
                                                 double s,
                                                 double phi1,
                                                 double kappa,
                                                 struct QcgPotential **out);

/**
 * Frees a potential handle; a null pointer is a no-op.
 *
 * # Safety
 * `pot` must be a pointer previously returned by a `qcg_potential_*`
 * constructor and not yet freed.
 */
void qcg_potential_free(struct QcgPotential *pot);

/**
 * φ(r), with `+∞` encoding the hard core.
 *
 * # Safety
 * `pot` must be a live potential handle.
 */
enum QcgStatus qcg_phi(const struct QcgPotential *pot, double r, double *out);

/**
 * In-cube repulsion infimum b(a).
 *
 * # Safety
 * `pot` must be a live potential handle.
 */
enum QcgStatus qcg_b_of_a(const struct QcgPotential *pot, double a, double *out);

/**
 * Truncated attraction lattice sum υ_ε(a) and its tail bound.
 *
 * # Safety
 * `pot` must be a live potential handle.
 */
enum QcgStatus qcg_upsilon_eps(const struct QcgPotential *pot,
                               double a,
                               double eps,
                               uintptr_t cutoff,
                               double *value,
                               double *error);

/**
 * Strong-superstability constants A(a) = (b − 2υ₀)/4, B(a) = υ₀/2, m = 2.
 *
 * # Safety
 * `pot` must be a live potential handle.
 */
enum QcgStatus qcg_sss_constants(const struct QcgPotential *pot,
                                 double a,
                                 struct QcgStabilityConstants *out);

/**
 * Smallest root of `δ·b(a)/4 − υ₀(a)/2 = 0`.
 *
 * # Safety
 * `pot` must be a live potential handle.
 */
enum QcgStatus qcg_find_a_star(const struct QcgPotential *pot, double delta, double *out);

/**
 * Pair energy of `n_points` points packed as `dim`-major coordinates.
 *
 * # Safety
 * `pot` must be a live handle and `coords` must point to
 * `n_points * dim` doubles.
 */
enum QcgStatus qcg_pair_energy(const struct QcgPotential *pot,
                               const double *coords,
                               uintptr_t n_points,
                               double *out);

/**
 * Builds an ensemble over the box `Π [0, sides_i)`. A null potential means
 * the ideal gas. `stability_b` is the constant in `U ≥ −B|γ|` used by the
 * truncation tails (0 is valid for nonnegative interactions).
 *
 * # Safety
 * `sides` must point to `dim` doubles; `pot`, when non-null, must be a
 * live potential handle (it is copied, not consumed).
 */
enum QcgStatus qcg_ensemble_new(const struct QcgPotential *pot,
                                uintptr_t dim,
                                const double *sides,
                                double z,
                                double beta,
                                double stability_b,
                                struct QcgEnsemble **out);

/**
 * Frees an ensemble handle; a null pointer is a no-op.
 *
 * # Safety
 * `ens` must be a pointer previously returned by [`qcg_ensemble_new`] and
 * not yet freed.
 */
void qcg_ensemble_free(struct QcgEnsemble *ens);

/**
 * Z (when `a_dilute <= 0`) or the dilute Z⁻ at cube edge `a_dilute`, with
 * the total error bound (discretization plus truncation tail).
 *
 * # Safety
 * `ens` must be a live ensemble handle.
 */
enum QcgStatus qcg_partition_function(const struct QcgEnsemble *ens,
                                      double a_dilute,
                                      uint64_t seed,
                                      double tolerance,
                                      double *value,
                                      double *error);

/**
 * ρ(η) (when `a_dilute <= 0`) or ρ⁻(η) at cube edge `a_dilute`, for η
 * given as `n_eta` points of `dim` coordinates each.
 *
 * # Safety
 * `ens` must be a live ensemble handle and `eta` must point to
 * `n_eta * dim` doubles.
 */
enum QcgStatus qcg_correlation(const struct QcgEnsemble *ens,
                               const double *eta,
                               uintptr_t n_eta,
                               double a_dilute,
                               uint64_t seed,
                               double tolerance,
                               double *value,
                               double *error);

/**
 * The per-cube multiple-occupancy series ε₁(a) with the model's own edge
 * constants, plus its tail bound.
 *
 * # Safety
 * `ens` must be a live ensemble handle.
 */
enum QcgStatus qcg_epsilon1(const struct QcgEnsemble *ens,
                            double a,
                            uintptr_t cutoff,
                            double *value,
                            double *error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QCGAS_H */
