#pragma once
// Independent reference computations used by the tests. They deliberately
// avoid the library's quadrature, root finders and closed forms so that
// agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace oracle {

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Composite Simpson rule with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// P[nu > 0, lo < mu < hi] for (nu, mu) centred Gaussian with E[nu^2] = 1,
/// E[nu mu] = m, E[mu^2] = q, by conditioning on nu.
inline double orthant_band(double m, double q, double lo, double hi) {
  const double s = std::sqrt(q - m * m);
  auto f = [&](double nu) {
    const double a = (hi - m * nu) / s, b = (lo - m * nu) / s;
    return phi(nu) * (Phi(a) - Phi(b));
  };
  return simpson(f, 0.0, 12.0, 40000);
}

inline double robust_error(double m, double q, double shift) {
  return 2.0 * orthant_band(m, q, -std::numeric_limits<double>::infinity(), shift);
}
inline double boundary_error(double m, double q, double shift) {
  return 2.0 * orthant_band(m, q, 0.0, shift);
}

inline double lp(const Eigen::VectorXd& v, double q) {
  if (std::isinf(q)) return v.cwiseAbs().maxCoeff();
  return std::pow(v.cwiseAbs().array().pow(q).sum(), 1.0 / q);
}

/// max <w, delta> over ||delta||_q <= eps (and <ws, delta> = 0 when
/// `consistent`). Finite q: gradient ascent on the scale-free ratio
/// <w, B c> / ||B c||_q with B an orthonormal basis of the feasible subspace.
/// q = inf: enumeration of the vertices of the box intersected with the
/// hyperplane (at most one coordinate strictly inside the box).
inline double constrained_max(const Eigen::VectorXd& w, const Eigen::VectorXd& ws, double q,
                              double eps, bool consistent) {
  const Eigen::Index d = w.size();
  if (std::isinf(q)) {
    if (!consistent) return eps * w.cwiseAbs().sum();
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index free = 0; free < d; ++free) {
      if (std::abs(ws(free)) < 1e-14) continue;
      for (long mask = 0; mask < (1L << (d - 1)); ++mask) {
        Eigen::VectorXd delta(d);
        long bit = 0;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
          if (i == free) continue;
          delta(i) = ((mask >> bit++) & 1) ? eps : -eps;
          acc += ws(i) * delta(i);
        }
        delta(free) = -acc / ws(free);
        if (std::abs(delta(free)) > eps * (1 + 1e-12)) continue;
        best = std::max(best, w.dot(delta));
      }
    }
    return best;
  }
  // Orthonormal basis of the feasible subspace.
  Eigen::MatrixXd B;
  if (consistent) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(d, d) - ws * ws.transpose() / ws.squaredNorm();
    Eigen::MatrixXd Q(d, d - 1);
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < d && k < d - 1; ++j) {
      Eigen::VectorXd v = M.col(j);
      for (Eigen::Index i = 0; i < k; ++i) v -= Q.col(i).dot(v) * Q.col(i);
      if (v.norm() > 1e-8) Q.col(k++) = v.normalized();
    }
    B = Q.leftCols(k);
  } else {
    B = Eigen::MatrixXd::Identity(d, d);
  }
  const Eigen::VectorXd g = B.transpose() * w;
  auto ratio = [&](const Eigen::VectorXd& c) { return g.dot(c) / lp(B * c, q); };
  auto grad = [&](const Eigen::VectorXd& c) {
    const Eigen::VectorXd x = B * c;
    const double n = lp(x, q);
    Eigen::VectorXd dn(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      dn(i) = std::pow(std::abs(x(i)) / n, q - 1) * (x(i) > 0 ? 1.0 : (x(i) < 0 ? -1.0 : 0.0));
    return Eigen::VectorXd((g * n - g.dot(c) * (B.transpose() * dn)) / (n * n));
  };
  double best = -std::numeric_limits<double>::infinity();
  // Multiple starts: the gradient start and a few coordinate-like starts.
  std::vector<Eigen::VectorXd> starts{g};
  for (Eigen::Index j = 0; j < std::min<Eigen::Index>(B.cols(), 4); ++j)
    starts.push_back(g + 0.5 * g.norm() * Eigen::VectorXd::Unit(B.cols(), j));
  for (Eigen::VectorXd c : starts) {
    c /= lp(B * c, q);
    double val = ratio(c);
    double step = 1.0;
    for (int it = 0; it < 20000 && step > 1e-15; ++it) {
      const Eigen::VectorXd gr = grad(c);
      Eigen::VectorXd trial = c + step * gr;
      trial /= lp(B * trial, q);
      const double tv = ratio(trial);
      if (tv > val) {
        c = trial;
        val = tv;
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    best = std::max(best, val);
  }
  return eps * best;
}

/// argmin_z loss(y z - shift) + (z - omega)^2 / (2V) for the logistic
/// (logistic = true) or hinge loss. A dense scan locates the minimizing cell,
/// which is then refined by bisection on the sign of the right derivative
/// (value comparisons alone stall near sqrt(machine epsilon)).
inline double prox(bool logistic, int y, double omega, double V, double shift) {
  auto loss = [&](double t) {
    return logistic ? (t > 0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t)))
                    : std::max(0.0, 1.0 - t);
  };
  auto obj = [&](double z) { return loss(y * z - shift) + (z - omega) * (z - omega) / (2.0 * V); };
  auto right_slope = [&](double z) {
    const double t = y * z - shift;
    const double dl = logistic ? -1.0 / (1.0 + std::exp(t)) : (t < 1.0 ? -1.0 : 0.0);
    return y * dl + (z - omega) / V;
  };
  const double lo = omega - 3.0 * V - 3.0, hi = omega + 3.0 * V + 3.0;
  const int n = 200000;
  int best = 0;
  double bv = obj(lo);
  for (int i = 1; i <= n; ++i) {
    const double v = obj(lo + (hi - lo) * i / n);
    if (v < bv) bv = v, best = i;
  }
  const double h = (hi - lo) / n;
  double a = lo + (best - 1) * h, b = lo + (best + 1) * h;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    if (right_slope(mid) < 0.0) a = mid;
    else b = mid;
  }
  return 0.5 * (a + b);
}

}  // namespace oracle
