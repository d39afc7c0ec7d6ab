#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "advcons/special_math.hpp"

namespace advcons {

class InvalidGeometry : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NoAttackPossible : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Hoelder conjugate: 1/q + 1/q* = 1, with inf <-> 1.
inline double dual_exponent(double q) {
  if (!(q >= 1.0)) throw InvalidGeometry("dual_exponent: exponent must be >= 1");
  if (q == 1.0) return kInf;
  if (std::isinf(q)) return 1.0;
  return q / (q - 1.0);
}

/// Attack ball {delta : ||delta||_{q_att} <= eps}. `eps_tilde` is the
/// dimension-free radius the asymptotic formulas are written in.
struct AttackGeometry {
  double q_att = 2.0;
  double q_dual = 2.0;
  double eps = 0.0;
  double eps_tilde = 0.0;

  /// Radius taken literally; eps_tilde is left equal to eps.
  static AttackGeometry raw(double q_att, double eps) {
    return checked(q_att, eps, eps);
  }
  /// Well-specified scaling: eps = eps_tilde * d^{-1/q_dual}, for covariates
  /// with covariance I/d.
  static AttackGeometry wellspec(double q_att, double eps_tilde, Eigen::Index d) {
    const double qd = dual_exponent(q_att);
    return checked(q_att, eps_tilde * std::pow(double(d), -1.0 / qd), eps_tilde);
  }
  /// Latent scaling: eps = eps_tilde * d^{1/2 - 1/q_dual}, for latent
  /// variables with identity covariance and margins normalized by sqrt(p).
  static AttackGeometry latent(double q_att, double eps_tilde, Eigen::Index d) {
    const double qd = dual_exponent(q_att);
    return checked(q_att, eps_tilde * std::pow(double(d), 0.5 - 1.0 / qd), eps_tilde);
  }

 private:
  static AttackGeometry checked(double q_att, double eps, double eps_tilde) {
    if (!(q_att > 1.0)) throw InvalidGeometry("AttackGeometry: q_att must exceed 1");
    if (!(eps >= 0.0) || !(eps_tilde >= 0.0))
      throw InvalidGeometry("AttackGeometry: radius must be nonnegative");
    return AttackGeometry{q_att, dual_exponent(q_att), eps, eps_tilde};
  }
};

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Teacher and model weights. In the latent model `model` holds theta (length
/// p) and `features` the p x d matrix F, so the attackable direction in latent
/// space is F^T theta.
template <typename Scalar = double>
struct LinearPair {
  Vec<Scalar> teacher;
  Vec<Scalar> model;
  Mat<Scalar> features;

  bool latent() const { return features.size() > 0; }

  Vec<Scalar> latent_direction() const {
    if (!latent()) return model;
    if (features.rows() != model.size() || features.cols() != teacher.size())
      throw std::invalid_argument("LinearPair: feature map shape mismatch");
    return features.transpose() * model;
  }

  void check_teacher(double rel_tol = 1e-10) const {
    const double d = double(teacher.size());
    if (std::abs(double(teacher.squaredNorm()) / d - 1.0) > rel_tol)
      throw std::invalid_argument("LinearPair: teacher must have norm sqrt(d)");
  }
};

struct DualDistance {
  double distance = 0.0;
  double kappa = 0.0;
};

struct MarginSummary {
  double d_star = 0.0;
  double kappa = 0.0;
  double margin = 0.0;
  double rho_ratio = 0.0;
};

template <typename Derived>
double lp_norm(const Eigen::MatrixBase<Derived>& v, double q) {
  if (!(q >= 1.0)) throw InvalidGeometry("lp_norm: exponent must be >= 1");
  const Vec<double> a = v.template cast<double>().cwiseAbs();
  if (a.size() == 0) return 0.0;
  const double top = a.maxCoeff();
  if (std::isinf(q) || top == 0.0) return top;
  if (q == 1.0) return a.sum();
  if (q == 2.0) return a.norm();
  return top * std::pow((a / top).array().pow(q).sum(), 1.0 / q);
}

/// Component of v orthogonal to w_star.
template <typename DV, typename DW>
Vec<typename DV::Scalar> orthogonal_part(const Eigen::MatrixBase<DV>& v,
                                         const Eigen::MatrixBase<DW>& w_star) {
  return v - (v.dot(w_star) / w_star.squaredNorm()) * w_star;
}

namespace detail {

// Weighted median of ratios v_i / w_i with weights |w_i|: the minimizers of
// sum |v_i - k w_i| form an interval; return its point closest to zero.
inline double l1_line_fit(const Vec<double>& v, const Vec<double>& w) {
  std::vector<std::pair<double, double>> rw;
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (w(i) != 0.0) {
      rw.emplace_back(v(i) / w(i), std::abs(w(i)));
      total += std::abs(w(i));
    }
  std::sort(rw.begin(), rw.end());
  // Slope of the objective just right of rw[k] is 2*cum - total.
  double cum = 0.0;
  double lo = 0.0, hi = 0.0;
  bool found = false;
  for (std::size_t k = 0; k < rw.size(); ++k) {
    cum += rw[k].second;
    const double slope = 2.0 * cum - total;
    if (slope >= -1e-14 * total) {
      lo = rw[k].first;
      // Flat piece when the slope is exactly zero: extends to the next ratio.
      hi = (std::abs(slope) <= 1e-14 * total && k + 1 < rw.size()) ? rw[k + 1].first : lo;
      found = true;
      break;
    }
  }
  if (!found) return 0.0;
  if (lo <= 0.0 && hi >= 0.0) return 0.0;
  return std::abs(lo) < std::abs(hi) ? lo : hi;
}

}  // namespace detail

/// d_star = min_kappa ||v - kappa w_star||_{q_dual} and its minimizer.
///
/// For q_dual = 1 the minimizer is a weighted median of the coordinate ratios
/// (ties broken toward kappa = 0). For q_dual in (1, inf) the objective is
/// strictly convex and its minimizer lies between the smallest and largest
/// ratio, so the stationarity condition is solved by bracketed root finding.
template <typename DV, typename DW>
DualDistance dual_norm_distance(const Eigen::MatrixBase<DV>& v_in,
                                const Eigen::MatrixBase<DW>& w_in, double q_dual) {
  if (!(q_dual >= 1.0) || std::isinf(q_dual))
    throw InvalidGeometry("dual_norm_distance: q_dual must lie in [1, inf)");
  if (v_in.size() != w_in.size())
    throw std::invalid_argument("dual_norm_distance: length mismatch");
  const Vec<double> v0 = v_in.template cast<double>();
  const Vec<double> w0 = w_in.template cast<double>();
  const double sw = w0.cwiseAbs().maxCoeff();
  if (!(sw > 0.0)) throw std::invalid_argument("dual_norm_distance: w_star is zero");
  const double sv = v0.cwiseAbs().maxCoeff();
  if (sv == 0.0) return {0.0, 0.0};
  const Vec<double> v = v0 / sv;
  const Vec<double> w = w0 / sw;

  double k;
  if (q_dual == 1.0) {
    k = detail::l1_line_fit(v, w);
  } else if (q_dual == 2.0) {
    k = v.dot(w) / w.squaredNorm();
  } else {
    double lo = kInf, hi = -kInf;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (w(i) != 0.0) {
        lo = std::min(lo, v(i) / w(i));
        hi = std::max(hi, v(i) / w(i));
      }
    auto slope = [&](double kk) {
      const Eigen::ArrayXd r = (v - kk * w).array();
      return -(w.array() * r.sign() * r.abs().pow(q_dual - 1.0)).sum();
    };
    if (hi - lo <= 1e-15 * std::max(std::abs(lo), 1.0)) {
      k = lo;
    } else {
      const double s_lo = slope(lo), s_hi = slope(hi);
      if (s_lo >= 0.0) k = lo;
      else if (s_hi <= 0.0) k = hi;
      else k = find_root(slope, lo, hi, RootFindSpec{1.6, 1e-15 * (hi - lo) + 1e-300, 400});
    }
  }
  const double dist = sv * lp_norm(v - k * w, q_dual);
  return {dist, k * sv / sw};
}

/// Full geometric summary of one test point in the well-specified model.
template <typename Scalar, typename DX>
MarginSummary margin_summary(const LinearPair<Scalar>& pair, const Eigen::MatrixBase<DX>& x,
                             double q_dual) {
  const Vec<Scalar> dir = pair.latent_direction();
  const DualDistance dd = dual_norm_distance(dir, pair.teacher, q_dual);
  const double full = lp_norm(dir, q_dual);
  MarginSummary s;
  s.d_star = dd.distance;
  s.kappa = dd.kappa;
  s.margin = double(pair.model.dot(x.template cast<Scalar>()));
  s.rho_ratio = full > 0.0 ? std::min(1.0, dd.distance / full) : 0.0;
  return s;
}

/// Exists delta with ||delta||_q <= eps, <w_star, delta> = 0 flipping sign<w, x>?
/// Zero margins count as attackable whenever eps > 0.
template <typename Scalar, typename DX>
bool consistent_attack_exists(const LinearPair<Scalar>& pair, const Eigen::MatrixBase<DX>& x,
                              const AttackGeometry& geom) {
  if (pair.latent())
    throw std::invalid_argument("consistent_attack_exists: use the latent overload");
  const double margin = double(pair.model.dot(x.template cast<Scalar>()));
  if (geom.eps == 0.0) return false;
  if (margin == 0.0) return true;
  const double d_star = dual_norm_distance(pair.model, pair.teacher, geom.q_dual).distance;
  return geom.eps * d_star >= std::abs(margin);
}

/// Latent model: the attacker perturbs z. Margin <theta, F z + u>.
template <typename Scalar, typename DZ, typename DU>
bool consistent_attack_exists(const LinearPair<Scalar>& pair, const Eigen::MatrixBase<DZ>& z,
                              const Eigen::MatrixBase<DU>& u, const AttackGeometry& geom) {
  const Vec<Scalar> dir = pair.latent_direction();
  const double margin = double(dir.dot(z.template cast<Scalar>()) +
                               pair.model.dot(u.template cast<Scalar>()));
  if (geom.eps == 0.0) return false;
  if (margin == 0.0) return true;
  const double d_star = dual_norm_distance(dir, pair.teacher, geom.q_dual).distance;
  return geom.eps * d_star >= std::abs(margin);
}

/// Build the optimal consistent perturbation: <w_star, delta> = 0,
/// ||delta||_q = eps and <w, delta> = -sign(<w, x>) eps d_star.
template <typename Scalar, typename DX>
Vec<Scalar> craft_consistent_attack(const LinearPair<Scalar>& pair,
                                    const Eigen::MatrixBase<DX>& x,
                                    const AttackGeometry& geom) {
  if (pair.latent())
    throw std::invalid_argument("craft_consistent_attack: defined for the well-specified pair");
  const Vec<double> w = pair.model.template cast<double>();
  const Vec<double> ws = pair.teacher.template cast<double>();
  const DualDistance dd = dual_norm_distance(w, ws, geom.q_dual);
  const double scale = std::max(w.cwiseAbs().maxCoeff(), 1e-300);
  if (dd.distance <= 1e-13 * scale * std::sqrt(double(w.size())))
    throw NoAttackPossible("craft_consistent_attack: model is aligned with the teacher");
  const Vec<double> resid = w - dd.kappa * ws;
  const double margin = double(pair.model.dot(x.template cast<Scalar>()));
  const double sgn = margin > 0.0 ? -1.0 : (margin < 0.0 ? 1.0 : -1.0);

  Vec<double> delta(w.size());
  if (geom.q_dual == 1.0) {
    const double zero_tol = 1e-11 * resid.cwiseAbs().maxCoeff();
    double teacher_component = 0.0, free_weight = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (std::abs(resid(i)) > zero_tol) {
        delta(i) = resid(i) > 0 ? 1.0 : -1.0;
        teacher_component += ws(i) * delta(i);
      } else {
        delta(i) = 0.0;
        free_weight += std::abs(ws(i));
      }
    }
    // Split the cancelling mass evenly (in sign pattern) over the
    // coordinates where the residual vanishes.
    if (free_weight > 0.0)
      for (Eigen::Index i = 0; i < w.size(); ++i)
        if (std::abs(resid(i)) <= zero_tol && ws(i) != 0.0)
          delta(i) = -(teacher_component / free_weight) * (ws(i) > 0 ? 1.0 : -1.0);
    delta *= geom.eps;
  } else {
    const Eigen::ArrayXd r = resid.array() / resid.cwiseAbs().maxCoeff();
    delta = (r.sign() * r.abs().pow(geom.q_dual - 1.0)).matrix();
    const double n = lp_norm(delta, geom.q_att);
    delta *= geom.eps / n;
  }
  delta *= sgn;
  return delta.template cast<Scalar>();
}

/// P[consistent attack exists] for x ~ N(0, I/d).
template <typename Scalar>
double existence_probability_wellspec(const LinearPair<Scalar>& pair,
                                      const AttackGeometry& geom) {
  const double norm2 = double(pair.model.norm());
  if (geom.eps == 0.0 || norm2 == 0.0) return 0.0;
  const double d = double(pair.model.size());
  const double d_star = dual_norm_distance(pair.model, pair.teacher, geom.q_dual).distance;
  const double t = geom.eps * std::sqrt(d) * d_star / norm2;
  return std::erf(t / std::sqrt(2.0));
}

/// P[consistent attack exists] for z ~ N(0, I/d), u ~ N(0, I/p).
template <typename Scalar>
double existence_probability_latent(const LinearPair<Scalar>& pair, const AttackGeometry& geom,
                                    Eigen::Index p, Eigen::Index d) {
  if (!pair.latent() || pair.features.rows() != p || pair.features.cols() != d ||
      pair.model.size() != p || pair.teacher.size() != d)
    throw std::invalid_argument("existence_probability_latent: shape mismatch");
  if (geom.eps == 0.0) return 0.0;
  const Vec<double> dir = pair.latent_direction().template cast<double>();
  const double theta2 = double(pair.model.squaredNorm());
  const double denom = std::sqrt(theta2 + double(p) / double(d) * dir.squaredNorm());
  if (denom == 0.0) return 0.0;
  const double d_star = dual_norm_distance(dir, pair.teacher, geom.q_dual).distance;
  const double t = std::sqrt(double(p)) * geom.eps * d_star / denom;
  return std::erf(t / std::sqrt(2.0));
}

}  // namespace advcons
