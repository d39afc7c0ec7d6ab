#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advcons/special_math.hpp"
#include "advcons/state_evolution.hpp"

namespace advcons {

/// Covariances of the local fields: nu (teacher, unit variance) and mu
/// (model): E[nu mu] = m, E[mu^2] = q.
struct OverlapPair {
  double m = 0.0;
  double q = 1.0;
  std::optional<double> q_l;
  std::optional<double> q_f;
  std::optional<double> P;

  static OverlapPair from_state(const OverlapState& s) { return {s.m, s.q, s.q_l, s.q_f, s.P}; }
  void validate() const;
};

enum class Provenance { asymptotic, empirical_plugin, empirical_montecarlo };
std::string to_string(Provenance p);

struct MetricsReport {
  std::vector<double> eps_grid;
  double clean = 0.0;
  std::vector<double> rob;
  std::vector<double> rob_cns;
  std::vector<double> bnd_cns;
  Provenance provenance = Provenance::asymptotic;
  /// Margin shift per unit eps_tilde for consistent / unrestricted attacks.
  double shift_consistent = 0.0;
  double shift_inconsistent = 0.0;
  std::uint64_t seed = 0;

  /// 0 <= bnd <= rob_cns <= rob <= 1 at every grid point.
  bool chain_holds() const;
};

/// Default quadrature for error integrals; tight enough that differences of
/// nearby shifts stay accurate.
QuadratureSpec metrics_quadrature();

double factor_consistent_wellspec(const OverlapPair& ov, double q_dual);
double factor_inconsistent(double q, double q_dual);

enum class ErrorKind { robust, boundary };

/// robust:   P[nu > 0, mu < s] + P[nu < 0, mu > -s]
/// boundary: 2 P[nu > 0, 0 < mu < s]
double error_from_shift(const OverlapPair& ov, double shift, ErrorKind kind,
                        const QuadratureSpec& quad = metrics_quadrature());

/// Closed-form clean error arccos(m / sqrt(q)) / pi.
double clean_error_closed_form(const OverlapPair& ov);

/// All metrics on an eps grid from linear margin shifts a*eps (consistent) and
/// b*eps (unrestricted). Values are built as prefix sums of nonnegative
/// probability increments over the merged, sorted shift list, so the ordering
/// 0 <= bnd <= rob_cns <= rob <= 1 and monotonicity in eps hold exactly.
/// With channel_noise_var > 0 the indicator 1{nu > 0} is replaced by the
/// probit label probability Phi(nu / sqrt(noise)).
MetricsReport metrics_from_shifts(const OverlapPair& ov, const std::vector<double>& eps_grid,
                                  double shift_consistent, double shift_inconsistent,
                                  Provenance provenance,
                                  const QuadratureSpec& quad = metrics_quadrature(),
                                  double channel_noise_var = 0.0);

MetricsReport metrics_wellspec(const OverlapPair& ov, double q_dual,
                               const std::vector<double>& eps_grid);

/// Which expression to use for the latent consistent factor.
///  derived: inf_kappa of the limit of d^{-1} |F^T theta - kappa w*|^{q*}_{q*}
///           under the prior-channel joint law (default).
///  reweighted: outer Gaussian field with the teacher coordinate drawn from a
///           normalized teacher weight h(rho, Lambda); kept for comparison.
enum class LatentFactorForm { derived, reweighted };

struct LatentFactor {
  double value = 0.0;  // the A (or B) factor; the margin shift is eps * value^{1/q*}
  double kappa = 0.0;
};

LatentFactor factor_consistent_latent(const OverlapState& state, const LatentModelConfig& cfg,
                                      double q_dual,
                                      LatentFactorForm form = LatentFactorForm::derived);
double factor_inconsistent_latent(const OverlapState& state, const LatentModelConfig& cfg,
                                  double q_dual,
                                  LatentFactorForm form = LatentFactorForm::derived);
/// Objective whose infimum over kappa defines the consistent factor.
double latent_factor_objective(const OverlapState& state, const LatentModelConfig& cfg,
                               double q_dual, double kappa,
                               LatentFactorForm form = LatentFactorForm::derived);

MetricsReport metrics_latent(const OverlapState& state, const LatentModelConfig& cfg,
                             double q_dual, const std::vector<double>& eps_grid,
                             LatentFactorForm form = LatentFactorForm::derived);

}  // namespace advcons
