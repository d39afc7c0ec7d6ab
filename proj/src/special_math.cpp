#include "advcons/special_math.hpp"

#include <numbers>

namespace advcons {

void QuadratureSpec::validate() const {
  if (!(abs_tol > 0.0) || !(rel_tol > 0.0))
    throw std::invalid_argument("QuadratureSpec: tolerances must be positive");
  if (!(cutoff >= 6.0)) throw std::invalid_argument("QuadratureSpec: cutoff must be >= 6");
  if (max_intervals < 1) throw std::invalid_argument("QuadratureSpec: max_intervals < 1");
}

void RootFindSpec::validate() const {
  if (!(tol > 0.0)) throw std::invalid_argument("RootFindSpec: tolerance must be positive");
  if (max_iter < 1) throw std::invalid_argument("RootFindSpec: max_iter must be >= 1");
  if (!(expansion > 0.0)) throw std::invalid_argument("RootFindSpec: expansion must be positive");
}

double std_normal_cdf(double t) { return 0.5 * std::erfc(-t * std::numbers::sqrt2 / 2.0); }

double std_normal_pdf(double t) {
  return std::exp(-0.5 * t * t) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

double gaussian_abs_moment(double p) {
  if (!(p > -1.0)) throw std::invalid_argument("gaussian_abs_moment: p must exceed -1");
  return std::pow(2.0, 0.5 * p) * std::tgamma(0.5 * (p + 1.0)) * std::numbers::inv_sqrtpi;
}

double gaussian_norm_constant(double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("gaussian_norm_constant: p must be >= 1");
  return std::numbers::sqrt2 *
         std::pow(std::tgamma(0.5 * (p + 1.0)) * std::numbers::inv_sqrtpi, 1.0 / p);
}

}  // namespace advcons
