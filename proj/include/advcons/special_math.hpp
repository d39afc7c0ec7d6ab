#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace advcons {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when adaptive quadrature exhausts its interval budget. Carries the
/// best estimate reached so callers can decide whether it is usable.
class QuadratureError : public NumericalError {
 public:
  QuadratureError(const std::string& msg, double partial, double error)
      : NumericalError(msg), partial_(partial), error_(error) {}
  double partial_estimate() const noexcept { return partial_; }
  double error_estimate() const noexcept { return error_; }

 private:
  double partial_;
  double error_;
};

struct QuadratureSpec {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  /// Gaussian-weighted integrals are truncated to [-cutoff, cutoff].
  double cutoff = 8.0;
  int max_intervals = 5000;

  void validate() const;
};

struct RootFindSpec {
  double expansion = 1.6;
  double tol = 1e-12;
  int max_iter = 200;
  int max_expansions = 80;

  void validate() const;
};

struct MinimizeSpec {
  double tol = 1e-10;
  int max_iter = 500;
  double initial_step = 1.0;
};

struct ScalarMinimum {
  double argmin = 0.0;
  double min = 0.0;
  int iterations = 0;
  bool converged = false;
};

double std_normal_cdf(double t);
double std_normal_pdf(double t);
/// E|xi|^p for xi ~ N(0,1), p > -1.
double gaussian_abs_moment(double p);
/// sqrt(2) * (Gamma((p+1)/2)/sqrt(pi))^(1/p): the limit of d^{-1/p}||g||_p.
double gaussian_norm_constant(double p);

namespace detail {

// Gauss-Kronrod 7/15 abscissae and weights.
inline constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
inline constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

inline double magnitude(double x) { return std::abs(x); }
template <typename Derived>
double magnitude(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseAbs().maxCoeff();
}

template <typename R>
struct Panel {
  double a, b;
  R value;
  double error;
};

template <typename F>
auto gauss_kronrod15(const F& f, double a, double b) {
  using R = std::decay_t<decltype(f(a))>;
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const R fc = f(c);
  R kron = fc * kWgk[7];
  R gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double x = h * kXgk[j];
    const R sum = f(c - x) + f(c + x);
    kron += sum * kWgk[j];
    if (j % 2 == 1) gauss += sum * kWg[j / 2];
  }
  kron *= h;
  gauss *= h;
  const double err = magnitude(R(kron - gauss));
  return Panel<R>{a, b, kron, err};
}

}  // namespace detail

/// Adaptive Gauss-Kronrod integration of f over [a, b]. `breaks` lists
/// interior points where f is known to be non-smooth. f may return a double
/// or a fixed-size Eigen vector; the error is measured in the max norm.
template <typename F>
auto integrate(const F& f, double a, double b, const QuadratureSpec& spec = {},
               std::vector<double> breaks = {}) {
  using R = std::decay_t<decltype(f(a))>;
  using Panel = detail::Panel<R>;
  spec.validate();
  if (!(a < b)) {
    if (a == b) return R(f(a) * 0.0);
    throw std::invalid_argument("integrate: empty interval");
  }
  std::vector<double> nodes{a};
  std::sort(breaks.begin(), breaks.end());
  for (double x : breaks)
    if (std::isfinite(x) && x > nodes.back() && x < b) nodes.push_back(x);
  nodes.push_back(b);

  auto worse = [](const Panel& l, const Panel& r) { return l.error < r.error; };
  std::vector<Panel> heap;
  std::vector<Panel> settled;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
    heap.push_back(detail::gauss_kronrod15(f, nodes[i], nodes[i + 1]));
  std::make_heap(heap.begin(), heap.end(), worse);

  auto totals = [&]() {
    R sum = heap.empty() ? settled.front().value : heap.front().value;
    sum *= 0.0;
    double err = 0.0;
    for (const auto& p : heap) sum += p.value, err += p.error;
    for (const auto& p : settled) sum += p.value, err += p.error;
    return std::pair<R, double>{sum, err};
  };

  int panels = static_cast<int>(heap.size());
  double settled_err = 0.0;
  for (;;) {
    auto [sum, err] = totals();
    const double target = std::max(spec.abs_tol, spec.rel_tol * detail::magnitude(sum));
    if (err <= target || heap.empty()) return sum;
    if (err - settled_err <= 0.01 * target) return sum;  // only roundoff-limited panels remain
    if (panels >= spec.max_intervals) {
      double partial;
      if constexpr (std::is_same_v<R, double>) partial = sum;
      else partial = detail::magnitude(sum);
      throw QuadratureError("integrate: interval budget exhausted", partial, err);
    }
    // Refine a batch of the worst panels before recomputing totals.
    const int batch = std::max<int>(1, static_cast<int>(heap.size()) / 8);
    for (int k = 0; k < batch && !heap.empty(); ++k) {
      std::pop_heap(heap.begin(), heap.end(), worse);
      Panel worst = heap.back();
      heap.pop_back();
      const double mid = 0.5 * (worst.a + worst.b);
      const double scale = std::max({std::abs(worst.a), std::abs(worst.b), 1.0});
      if (worst.b - worst.a < 64 * std::numeric_limits<double>::epsilon() * scale) {
        settled_err += worst.error;
        settled.push_back(worst);
        continue;
      }
      heap.push_back(detail::gauss_kronrod15(f, worst.a, mid));
      std::push_heap(heap.begin(), heap.end(), worse);
      heap.push_back(detail::gauss_kronrod15(f, mid, worst.b));
      std::push_heap(heap.begin(), heap.end(), worse);
      ++panels;
    }
  }
}

/// E[f(xi)] for xi ~ N(0,1), truncated at +-spec.cutoff.
template <typename F>
auto gauss_expectation(const F& f, const QuadratureSpec& spec = {},
                       std::vector<double> breaks = {}) {
  using R = std::decay_t<decltype(f(0.0))>;
  const double c = spec.cutoff;
  return integrate([&](double x) -> R { return R(f(x) * std_normal_pdf(x)); }, -c, c, spec,
                   std::move(breaks));
}

/// Brent's method. The bracket is expanded geometrically until it contains a
/// sign change.
template <typename G>
double find_root(const G& g, double lo, double hi, const RootFindSpec& spec = {}) {
  spec.validate();
  if (lo > hi) std::swap(lo, hi);
  if (lo == hi) hi = lo + 1.0;
  double fa = g(lo), fb = g(hi);
  for (int k = 0; fa * fb > 0.0; ++k) {
    if (k >= spec.max_expansions)
      throw NumericalError("find_root: no sign change after bracket expansion");
    if (std::abs(fa) < std::abs(fb)) {
      lo += spec.expansion * (lo - hi);
      fa = g(lo);
    } else {
      hi += spec.expansion * (hi - lo);
      fb = g(hi);
    }
  }
  if (fa == 0.0) return lo;
  if (fb == 0.0) return hi;

  double a = lo, b = hi, c = hi, fc = fb, d = 0.0, e = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  for (int it = 0; it < spec.max_iter; ++it) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a, fc = fa;
      e = d = b - a;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b, b = c, c = a;
      fa = fb, fb = fc, fc = fa;
    }
    const double tol1 = 2.0 * eps * std::abs(b) + 0.5 * spec.tol;
    const double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol1 || fb == 0.0) return b;
    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      double p, q, r;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        q = fa / fc;
        r = fb / fc;
        p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
        q = (q - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      const double min1 = 3.0 * xm * q - std::abs(tol1 * q);
      const double min2 = std::abs(e * q);
      if (2.0 * p < std::min(min1, min2)) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b, fa = fb;
    b += (std::abs(d) > tol1) ? d : (xm > 0 ? tol1 : -tol1);
    fb = g(b);
  }
  throw NumericalError("find_root: iteration budget exhausted");
}

/// Brent's golden-section search with parabolic steps on a known interval.
template <typename H>
ScalarMinimum minimize_bracketed(const H& h, double lo, double hi,
                                 const MinimizeSpec& spec = {}) {
  if (lo > hi) std::swap(lo, hi);
  constexpr double kGold = 0.3819660112501051;
  const double sqrt_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  double a = lo, b = hi;
  double x = a + kGold * (b - a), w = x, v = x;
  double fx = h(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  ScalarMinimum out;
  for (int it = 1; it <= spec.max_iter; ++it) {
    const double xm = 0.5 * (a + b);
    const double tol1 = sqrt_eps * std::abs(x) + spec.tol / 3.0;
    const double tol2 = 2.0 * tol1;
    out.iterations = it;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) {
      out.converged = true;
      break;
    }
    bool golden = true;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * etemp) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (xm >= x) ? tol1 : -tol1;
        golden = false;
      }
    }
    if (golden) {
      e = (x >= xm) ? a - x : b - x;
      d = kGold * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + (d > 0 ? tol1 : -tol1);
    const double fu = h(u);
    if (fu <= fx) {
      (u >= x ? a : b) = x;
      v = w, fv = fw;
      w = x, fw = fx;
      x = u, fx = fu;
    } else {
      (u < x ? a : b) = u;
      if (fu <= fw || w == x) {
        v = w, fv = fw;
        w = u, fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u, fv = fu;
      }
    }
  }
  for (double end : {lo, hi}) {
    const double fe = h(end);
    if (fe < fx) x = end, fx = fe;
  }
  out.argmin = x;
  out.min = fx;
  return out;
}

/// Minimize h starting from `hint`: the minimum is bracketed by downhill
/// golden expansion, then refined with minimize_bracketed. Returns the best
/// point seen, so h(argmin) <= h(hint) always.
template <typename H>
ScalarMinimum minimize_scalar(const H& h, double hint, const MinimizeSpec& spec = {}) {
  constexpr double kGrow = 1.618033988749895;
  double a = hint, b = hint + spec.initial_step;
  double fa = h(a), fb = h(b);
  if (fb > fa) {
    std::swap(a, b);
    std::swap(fa, fb);
  }
  double c = b + kGrow * (b - a);
  double fc = h(c);
  int expansions = 0;
  while (fc < fb) {
    if (++expansions > 200) {
      return ScalarMinimum{c, fc, expansions, false};
    }
    a = b, fa = fb;
    b = c, fb = fc;
    c = b + kGrow * (b - a);
    fc = h(c);
  }
  ScalarMinimum res = minimize_bracketed(h, std::min(a, c), std::max(a, c), spec);
  const double fh = h(hint);
  if (fh < res.min) {
    res.argmin = hint;
    res.min = fh;
  }
  res.iterations += expansions;
  return res;
}

struct NelderMeadSpec {
  double ftol = 1e-8;
  double xtol = 1e-6;
  int max_evaluations = 400;
  double initial_step = 0.5;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
  /// Best objective value after each iteration.
  std::vector<double> trace;
};

/// Derivative-free simplex minimization. Non-finite objective values are
/// treated as +infinity.
template <typename H>
NelderMeadResult nelder_mead(const H& h, const Eigen::VectorXd& x0,
                             const NelderMeadSpec& spec = {}) {
  const Eigen::Index n = x0.size();
  NelderMeadResult out;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++out.evaluations;
    const double v = h(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::vector<Eigen::VectorXd> pts(n + 1, x0);
  std::vector<double> vals(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) pts[i + 1](i) += spec.initial_step;
  for (Eigen::Index i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

  std::vector<Eigen::Index> order(n + 1);
  auto sort_simplex = [&]() {
    for (Eigen::Index i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto l, auto r) { return vals[l] < vals[r]; });
    std::vector<Eigen::VectorXd> p2(n + 1);
    std::vector<double> v2(n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) p2[i] = pts[order[i]], v2[i] = vals[order[i]];
    pts.swap(p2);
    vals.swap(v2);
  };

  while (out.evaluations < spec.max_evaluations) {
    sort_simplex();
    out.trace.push_back(vals[0]);
    double diam = 0.0;
    for (Eigen::Index i = 1; i <= n; ++i)
      diam = std::max(diam, (pts[i] - pts[0]).cwiseAbs().maxCoeff());
    const double spread = std::abs(vals[n] - vals[0]);
    if (std::isfinite(vals[n]) && spread <= spec.ftol * (1.0 + std::abs(vals[0])) &&
        diam <= spec.xtol) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = centroid + (centroid - pts[n]);
    const double fr = eval(xr);
    if (fr < vals[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[n]);
      const double fe = eval(xe);
      if (fe < fr) pts[n] = xe, vals[n] = fe;
      else pts[n] = xr, vals[n] = fr;
      continue;
    }
    if (fr < vals[n - 1]) {
      pts[n] = xr, vals[n] = fr;
      continue;
    }
    const bool outside = fr < vals[n];
    const Eigen::VectorXd xc =
        outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                : Eigen::VectorXd(centroid + 0.5 * (pts[n] - centroid));
    const double fc = eval(xc);
    if (fc < std::min(fr, vals[n])) {
      pts[n] = xc, vals[n] = fc;
      continue;
    }
    for (Eigen::Index i = 1; i <= n; ++i) {
      pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
      vals[i] = eval(pts[i]);
    }
  }
  sort_simplex();
  out.x = pts[0];
  out.value = vals[0];
  return out;
}

}  // namespace advcons
