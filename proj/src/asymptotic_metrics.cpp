#include "advcons/asymptotic_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "advcons/geometry.hpp"

namespace advcons {

void OverlapPair::validate() const {
  if (!(q > 0.0)) throw std::domain_error("OverlapPair: q must be positive");
  if (q < m * m * (1.0 - 1e-12)) throw std::domain_error("OverlapPair: q < m^2");
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::asymptotic: return "asymptotic";
    case Provenance::empirical_plugin: return "empirical-plugin";
    case Provenance::empirical_montecarlo: return "empirical-montecarlo";
  }
  return "unknown";
}

bool MetricsReport::chain_holds() const {
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    if (!(0.0 <= bnd_cns[i] && bnd_cns[i] <= rob_cns[i] && rob_cns[i] <= rob[i] && rob[i] <= 1.0))
      return false;
  }
  return true;
}

QuadratureSpec metrics_quadrature() {
  QuadratureSpec q;
  q.abs_tol = 1e-13;
  q.rel_tol = 1e-12;
  return q;
}

double factor_consistent_wellspec(const OverlapPair& ov, double q_dual) {
  if (ov.q < ov.m * ov.m) throw std::domain_error("factor_consistent_wellspec: q < m^2");
  return std::sqrt(ov.q - ov.m * ov.m) * gaussian_norm_constant(q_dual);
}

double factor_inconsistent(double q, double q_dual) {
  if (!(q >= 0.0)) throw std::domain_error("factor_inconsistent: q must be nonnegative");
  return std::sqrt(q) * gaussian_norm_constant(q_dual);
}

double clean_error_closed_form(const OverlapPair& ov) {
  return std::acos(std::clamp(ov.m / std::sqrt(ov.q), -1.0, 1.0)) / std::numbers::pi;
}

namespace {

// Phi(a) - Phi(b) for a >= b, computed on the side with the smaller tail.
double cdf_gap(double a, double b) {
  if (b >= 0.0) return std_normal_cdf(-b) - std_normal_cdf(-a);
  return std_normal_cdf(a) - std_normal_cdf(b);
}

// P[xi' < (s - m nu) / sigma] allowing sigma = 0.
double cond_cdf(double s, double m, double nu, double sigma) {
  const double num = s - m * nu;
  if (sigma > 0.0) return std_normal_cdf(num / sigma);
  return num > 0 ? 1.0 : 0.0;
}

struct Fields {
  double m, sigma;
  double noise = 0.0;  // > 0: weight nu by P(y = +1 | nu) instead of 1{nu > 0}

  double weight(double nu) const {
    return noise > 0.0 ? std_normal_cdf(nu / std::sqrt(noise)) : 1.0;
  }
};

Fields fields_of(const OverlapPair& ov, double noise = 0.0) {
  ov.validate();
  return {ov.m, std::sqrt(std::max(ov.q - ov.m * ov.m, 0.0)), noise};
}

std::vector<double> breaks_for(double m, std::initializer_list<double> shifts) {
  std::vector<double> b;
  if (m > 0.0)
    for (double s : shifts) b.push_back(s / m);
  return b;
}

// 2 P[nu > 0, s1 <= mu < s2], s1 <= s2.
double band_probability(const Fields& f, double s1, double s2, const QuadratureSpec& quad) {
  if (!(s2 > s1)) return 0.0;
  auto integrand = [&](double nu) {
    double gap;
    if (f.sigma > 0.0) {
      gap = cdf_gap((s2 - f.m * nu) / f.sigma, (s1 - f.m * nu) / f.sigma);
    } else {
      gap = cond_cdf(s2, f.m, nu, 0.0) - cond_cdf(s1, f.m, nu, 0.0);
    }
    return gap * f.weight(nu) * std_normal_pdf(nu);
  };
  std::vector<double> br = breaks_for(f.m, {s1, s2});
  br.push_back(0.0);
  const double v =
      2.0 * integrate(integrand, f.noise > 0 ? -quad.cutoff : 0.0, quad.cutoff, quad, br);
  return std::max(v, 0.0);
}

double clean_of(const Fields& f, const QuadratureSpec& quad) {
  auto integrand = [&](double nu) {
    return cond_cdf(0.0, f.m, nu, f.sigma) * f.weight(nu) * std_normal_pdf(nu);
  };
  const double v =
      2.0 * integrate(integrand, f.noise > 0 ? -quad.cutoff : 0.0, quad.cutoff, quad, {0.0});
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

double error_from_shift(const OverlapPair& ov, double shift, ErrorKind kind,
                        const QuadratureSpec& quad) {
  if (!(shift >= 0.0)) throw std::invalid_argument("error_from_shift: shift must be >= 0");
  const Fields f = fields_of(ov);
  if (kind == ErrorKind::boundary) return std::min(1.0, band_probability(f, 0.0, shift, quad));
  auto integrand = [&](double nu) {
    return cond_cdf(shift, f.m, nu, f.sigma) * std_normal_pdf(nu);
  };
  const double v =
      2.0 * integrate(integrand, 0.0, quad.cutoff, quad, breaks_for(f.m, {0.0, shift}));
  return std::clamp(v, 0.0, 1.0);
}

MetricsReport metrics_from_shifts(const OverlapPair& ov, const std::vector<double>& eps_grid,
                                  double a, double b, Provenance provenance,
                                  const QuadratureSpec& quad, double channel_noise_var) {
  if (!(a >= 0.0) || !(b >= 0.0)) throw std::invalid_argument("metrics: negative shift factor");
  for (double e : eps_grid)
    if (!(e >= 0.0)) throw std::invalid_argument("metrics: eps grid must be nonnegative");
  a = std::min(a, b);
  const Fields f = fields_of(ov, channel_noise_var);

  MetricsReport rep;
  rep.eps_grid = eps_grid;
  rep.provenance = provenance;
  rep.shift_consistent = a;
  rep.shift_inconsistent = b;
  rep.clean = clean_of(f, quad);

  // Merge all shifts, accumulate band probabilities in increasing order.
  std::vector<double> shifts;
  for (double e : eps_grid) {
    shifts.push_back(a * e);
    shifts.push_back(b * e);
  }
  std::sort(shifts.begin(), shifts.end());
  shifts.erase(std::unique(shifts.begin(), shifts.end()), shifts.end());
  std::vector<double> cum(shifts.size(), 0.0);
  double acc = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    acc += band_probability(f, prev, shifts[i], quad);
    cum[i] = acc;
    prev = shifts[i];
  }
  auto band_at = [&](double s) {
    const auto it = std::lower_bound(shifts.begin(), shifts.end(), s);
    return cum[std::size_t(it - shifts.begin())];
  };
  for (double e : eps_grid) {
    const double bc = band_at(a * e);
    const double bi = band_at(b * e);
    const double rc = std::min(1.0, rep.clean + bc);
    const double ri = std::min(1.0, rep.clean + bi);
    rep.rob_cns.push_back(rc);
    rep.rob.push_back(ri);
    rep.bnd_cns.push_back(std::min(bc, rc));
  }
  return rep;
}

MetricsReport metrics_wellspec(const OverlapPair& ov, double q_dual,
                               const std::vector<double>& eps_grid) {
  return metrics_from_shifts(ov, eps_grid, factor_consistent_wellspec(ov, q_dual),
                             factor_inconsistent(ov.q, q_dual), Provenance::asymptotic);
}

// ---------------------------------------------------------------------------
// Latent consistent factor

namespace {

QuadratureSpec inner_quad() {
  QuadratureSpec q;
  q.abs_tol = 1e-11;
  q.rel_tol = 1e-10;
  return q;
}

QuadratureSpec outer_quad() {
  QuadratureSpec q;
  q.abs_tol = 1e-10;
  q.rel_tol = 1e-9;
  return q;
}

double soft(double b, double thr) {
  const double a = std::abs(b) - thr;
  return a > 0.0 ? std::copysign(a, b) : 0.0;
}

// Block description: t = soft(c w + s g, thr) / D.
struct Block {
  double c, s, thr, D;
};

// E_{w,g} |soft(c w + s g, thr)/D - kappa w|^p over independent standard
// normals, by nested quadrature (g inside, w outside).
double block_objective(const Block& bl, double kappa, double p) {
  auto inner = [&](double w) {
    const double drift = bl.c * w;
    auto fn = [&](double g) {
      return std::pow(std::abs(soft(drift + bl.s * g, bl.thr) / bl.D - kappa * w), p);
    };
    if (bl.s == 0.0) return fn(0.0);
    std::vector<double> br{(bl.thr - drift) / bl.s, (-bl.thr - drift) / bl.s,
                           (bl.thr + kappa * w * bl.D - drift) / bl.s,
                           (-bl.thr + kappa * w * bl.D - drift) / bl.s};
    return gauss_expectation(fn, inner_quad(), br);
  };
  return gauss_expectation(inner, outer_quad(), {0.0});
}

// Reweighted form: outer xi, teacher coordinate drawn from the normalized weight
// h(rho, Lambda) ~ exp(-(1 + Lambda) w^2 / 2 + rho w), i.e. a Gaussian with mean
// rho / (1 + Lambda) and variance 1 / (1 + Lambda). The thresholded variable
// only carries the noise part of the field.
double reweighted_block_objective(double s, double thr, double D, double rho_scale, double Lambda,
                             double kappa, double p) {
  const double sd = 1.0 / std::sqrt(1.0 + Lambda);
  auto outer = [&](double xi) {
    const double f = soft(s * xi, thr) / D;
    const double mean = rho_scale * xi / (1.0 + Lambda);
    auto fn = [&](double t) {
      const double w = mean + sd * t;
      return std::pow(std::abs(f - kappa * w), p) + std::pow(std::abs(kappa * w), p);
    };
    std::vector<double> br{-mean / sd};
    if (kappa != 0.0) br.push_back((f / kappa - mean) / sd);
    return gauss_expectation(fn, inner_quad(), br);
  };
  std::vector<double> br{0.0};
  if (s > 0.0) br = {0.0, thr / s, -thr / s};
  return gauss_expectation(outer, outer_quad(), br);
}

void require_converged(const OverlapState& st) {
  if (!st.converged)
    throw std::domain_error("latent factor: state is not a converged fixed point");
}

}  // namespace

double latent_factor_objective(const OverlapState& st, const LatentModelConfig& cfg,
                               double q_dual, double kappa, LatentFactorForm form) {
  const double g = cfg.gamma;
  const double lam = cfg.lambda;
  const double thr = 0.5 * st.P_hat;
  const double p = q_dual;
  if (form == LatentFactorForm::derived) {
    if (g <= 1.0) {
      const double k = 1.0 + 1.0 / g;
      const Block b1{st.m_hat / std::sqrt(g), std::sqrt(st.q_hat * k), thr, st.V_hat * k + 2 * lam};
      return block_objective(b1, kappa, p);
    }
    const Block b{st.m_hat, std::sqrt(2.0 * st.q_hat), thr, 2.0 * st.V_hat + 2 * lam};
    const double free_part = std::pow(std::abs(kappa), p) * gaussian_abs_moment(p);
    return std::pow(g, 0.5 * p) *
           (block_objective(b, kappa, p) / g + (1.0 - 1.0 / g) * free_part);
  }
  if (g <= 1.0) {
    const double k = 1.0 + 1.0 / g;
    const double lam1 = st.m_hat * st.m_hat / ((1.0 + g) * st.q_hat);
    const double rs1 = st.m_hat / std::sqrt((1.0 + g) * st.q_hat);
    const double t1 = reweighted_block_objective(std::sqrt(st.q_hat * k), thr, st.V_hat * k + 2 * lam,
                                            rs1, lam1, kappa, p);
    const double t2 = reweighted_block_objective(std::sqrt(st.q_hat), thr, st.V_hat + 2 * lam, 0.0,
                                            0.0, kappa, p);
    return g * t1 + (1.0 - g) * t2;
  }
  const double lam3 = st.m_hat * st.m_hat / (2.0 * st.q_hat);
  const double rs3 = st.m_hat / std::sqrt(2.0 * st.q_hat);
  return reweighted_block_objective(std::sqrt(2.0 * st.q_hat), thr, 2.0 * st.V_hat + 2 * lam, rs3,
                               lam3, kappa, p);
}

double factor_inconsistent_latent(const OverlapState& st, const LatentModelConfig& cfg,
                                  double q_dual, LatentFactorForm form) {
  require_converged(st);
  return latent_factor_objective(st, cfg, q_dual, 0.0, form);
}

LatentFactor factor_consistent_latent(const OverlapState& st, const LatentModelConfig& cfg,
                                      double q_dual, LatentFactorForm form) {
  require_converged(st);
  auto h = [&](double k) { return latent_factor_objective(st, cfg, q_dual, k, form); };
  const double at_zero = h(0.0);
  // For q* = 2 the minimizer is exactly the overlap m (gamma <= 1), so it is
  // a good starting point in general.
  const double hint = std::isfinite(st.m) ? st.m : 0.0;
  MinimizeSpec ms;
  ms.tol = 1e-8;
  ms.initial_step = 0.1 * std::max(1.0, std::abs(hint));
  const ScalarMinimum best = minimize_scalar(h, hint, ms);
  if (best.min < at_zero) return {best.min, best.argmin};
  return {at_zero, 0.0};
}

MetricsReport metrics_latent(const OverlapState& st, const LatentModelConfig& cfg, double q_dual,
                             const std::vector<double>& eps_grid, LatentFactorForm form) {
  const LatentFactor a = factor_consistent_latent(st, cfg, q_dual, form);
  const double b = factor_inconsistent_latent(st, cfg, q_dual, form);
  return metrics_from_shifts(OverlapPair::from_state(st), eps_grid,
                             std::pow(a.value, 1.0 / q_dual), std::pow(b, 1.0 / q_dual),
                             Provenance::asymptotic);
}

}  // namespace advcons
