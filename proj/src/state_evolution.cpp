#include "advcons/state_evolution.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>

namespace advcons {

Loss parse_loss(const std::string& name) {
  if (name == "logistic") return Loss::logistic;
  if (name == "hinge") return Loss::hinge;
  throw std::invalid_argument("unknown loss: " + name);
}

Link parse_link(const std::string& name) {
  if (name == "sign") return Link::sign;
  if (name == "probit") return Link::probit;
  throw std::invalid_argument("unknown link: " + name);
}

std::string to_string(Loss loss) { return loss == Loss::logistic ? "logistic" : "hinge"; }
std::string to_string(Link link) { return link == Link::sign ? "sign" : "probit"; }

void OverlapState::validate() const {
  if (!(q >= m * m - 1e-9)) throw std::domain_error("OverlapState: q < m^2");
  if (!(V > 0.0)) throw std::domain_error("OverlapState: V must be positive");
  if (!(P >= 0.0)) throw std::domain_error("OverlapState: P must be nonnegative");
  if (!(q_l >= 0.0) || !(q_f >= 0.0)) throw std::domain_error("OverlapState: negative norm");
  if (std::abs(q - (q_l + q_f)) > 1e-8 * std::max(1.0, q))
    throw std::domain_error("OverlapState: q != q_l + q_f");
}

std::vector<std::pair<std::string, double>> OverlapState::record() const {
  return {{"m", m},         {"q", q},         {"V", V},         {"P", P},
          {"m_hat", m_hat}, {"q_hat", q_hat}, {"V_hat", V_hat}, {"P_hat", P_hat},
          {"q_l", q_l},     {"q_f", q_f},     {"residual", residual},
          {"iterations", double(iterations)}};
}

LatentModelConfig LatentModelConfig::from_alpha_gamma(double alpha, double gamma) {
  LatentModelConfig c;
  c.alpha = alpha;
  c.gamma = gamma;
  c.psi = 1.0 / (alpha * gamma);
  return c;
}

LatentModelConfig LatentModelConfig::from_alpha_psi(double alpha, double psi) {
  LatentModelConfig c;
  c.alpha = alpha;
  c.psi = psi;
  c.gamma = 1.0 / (alpha * psi);
  return c;
}

void LatentModelConfig::validate() const {
  if (!(alpha > 0.0) || !(psi > 0.0) || !(gamma > 0.0))
    throw std::invalid_argument("LatentModelConfig: ratios must be positive");
  if (std::abs(gamma * alpha * psi - 1.0) > 1e-12)
    throw std::invalid_argument("LatentModelConfig: gamma * alpha * psi must equal 1");
  if (!(lambda >= 0.0) || !(r >= 0.0))
    throw std::invalid_argument("LatentModelConfig: lambda and r must be nonnegative");
  if (!(s_dual >= 1.0)) throw std::invalid_argument("LatentModelConfig: s_dual must be >= 1");
  if (!(q_att > 1.0)) throw std::invalid_argument("LatentModelConfig: q_att must exceed 1");
  if (!(noise_var >= 0.0)) throw std::invalid_argument("LatentModelConfig: negative noise");
}

void SolverSettings::validate() const {
  if (!(damping > 0.0 && damping <= 1.0))
    throw std::invalid_argument("SolverSettings: damping must lie in (0, 1]");
  if (!(tol > 0.0)) throw std::invalid_argument("SolverSettings: tolerance must be positive");
  if (max_iter < 1) throw std::invalid_argument("SolverSettings: max_iter must be >= 1");
}

// ---------------------------------------------------------------------------
// Channel

double Z0_channel(int y, double omega, double V, Link link, double noise_var) {
  if (!(V > 0.0)) throw std::invalid_argument("Z0_channel: V must be positive");
  const double var = V + (link == Link::probit ? noise_var : 0.0);
  return std_normal_cdf(y * omega / std::sqrt(var));
}

double dZ0_domega(int y, double omega, double V, Link link, double noise_var) {
  if (!(V > 0.0)) throw std::invalid_argument("dZ0_domega: V must be positive");
  const double sd = std::sqrt(V + (link == Link::probit ? noise_var : 0.0));
  return y * std_normal_pdf(omega / sd) / sd;
}

double loss_value(Loss loss, double t) {
  if (loss == Loss::hinge) return std::max(0.0, 1.0 - t);
  return t > 0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

namespace {

double sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace

// In the label frame u = y z, w = y omega the problem is
//   min_u loss(u - shift) + (u - w)^2 / (2V),
// and both losses are nonincreasing, so u >= w.
ProxPoint prox_shifted_loss_point(Loss loss, int y, double omega, double V, double shift) {
  if (!(V > 0.0)) throw std::invalid_argument("prox_shifted_loss: V must be positive");
  if (y != 1 && y != -1) throw std::invalid_argument("prox_shifted_loss: label must be +-1");
  const double w = y * omega;
  double u, du;
  if (loss == Loss::hinge) {
    const double knee = 1.0 + shift;
    if (w >= knee) u = w, du = 1.0;
    else if (w + V <= knee) u = w + V, du = 1.0;
    else u = knee, du = 0.0;
  } else {
    // Stationarity (u - w)/V = sigmoid(shift - u); root lies in [w, w + V].
    auto g = [&](double uu) { return (uu - w) / V - sigmoid(shift - uu); };
    try {
      u = find_root(g, w, w + V);
    } catch (const NumericalError& e) {
      std::ostringstream os;
      os << e.what() << " (y=" << y << ", omega=" << omega << ", V=" << V
         << ", shift=" << shift << ")";
      throw NumericalError(os.str());
    }
    const double s = sigmoid(u - shift);
    du = 1.0 / (1.0 + V * s * (1.0 - s));
  }
  return {y * u, du};
}

double prox_shifted_loss(Loss loss, int y, double omega, double V, double shift) {
  return prox_shifted_loss_point(loss, y, omega, V, shift).z;
}

std::pair<double, double> f_loss(Loss loss, int y, double omega, double V, double shift) {
  const ProxPoint p = prox_shifted_loss_point(loss, y, omega, V, shift);
  return {(p.z - omega) / V, (p.dz_domega - 1.0) / V};
}

double prox_elastic_net(double v, double Lambda, double thr, double lambda) {
  if (!(Lambda > 0.0)) throw std::invalid_argument("prox_elastic_net: Lambda must be positive");
  if (!(thr >= 0.0) || !(lambda >= 0.0))
    throw std::invalid_argument("prox_elastic_net: negative penalty");
  const double a = std::abs(v) - thr;
  if (a <= 0.0) return 0.0;
  return std::copysign(a, v) / (Lambda + 2.0 * lambda);
}

// The four conjugates are computed in one vector-valued quadrature pass over
// the field xi. With omega = sqrt(q) xi, the teacher field conditioned on xi
// has mean (m / sqrt(q)) xi and variance 1 - m^2 / q. The loss margin is
// shifted by r * P (training geometry with s* = 1).
ChannelHats channel_update(const OverlapState& st, const LatentModelConfig& cfg,
                           const QuadratureSpec& quad) {
  cfg.validate();
  if (cfg.r > 0.0 && cfg.s_dual != 1.0)
    throw std::invalid_argument("channel_update: robust training requires s_dual = 1");
  if (!(st.V > 0.0) || !(st.q > 0.0)) throw std::domain_error("channel_update: need V, q > 0");
  const double sq = std::sqrt(st.q);
  const double ratio = st.m / sq;
  const double v0 = std::max(1.0 - ratio * ratio, 1e-14);
  const double shift = cfg.r * st.P;
  const double V = st.V;

  auto integrand = [&](double xi) -> Eigen::Vector4d {
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    const double omega0 = ratio * xi;
    for (int y : {1, -1}) {
      const double z0 = Z0_channel(y, omega0, v0, cfg.link, cfg.noise_var);
      const double dz0 = dZ0_domega(y, omega0, v0, cfg.link, cfg.noise_var);
      const auto [f, df] = f_loss(cfg.loss, y, sq * xi, V, shift);
      acc(0) += dz0 * f;
      acc(1) += z0 * f * f;
      acc(2) -= z0 * df;
      acc(3) += y * z0 * f;
    }
    return acc;
  };
  std::vector<double> breaks{0.0};
  if (cfg.loss == Loss::hinge)
    for (double k : {1.0 + shift, 1.0 + shift - V}) {
      breaks.push_back(k / sq);
      breaks.push_back(-k / sq);
    }
  const Eigen::Vector4d e = gauss_expectation(integrand, quad, breaks);
  const double ag = cfg.alpha * cfg.gamma;
  ChannelHats h;
  h.m_hat = cfg.alpha * std::sqrt(cfg.gamma) * e(0);
  h.q_hat = ag * e(1);
  h.V_hat = ag * e(2);
  // Stored with the factor 2 so that the prior threshold is P_hat / 2.
  h.P_hat = 2.0 * cfg.r * ag * e(3);
  return h;
}

// ---------------------------------------------------------------------------
// Prior

double Zw_star(double rho, double Lambda) {
  return std::exp(rho * rho / (2.0 * (Lambda + 1.0))) / std::sqrt(Lambda + 1.0);
}

double dZw_star_drho(double rho, double Lambda) {
  return rho / (Lambda + 1.0) * Zw_star(rho, Lambda);
}

namespace {

// Moments of t = soft(b, thr) / D with b ~ N(0, c^2 + s^2) and b = c w + s g
// for independent standard normals (w, g).
struct BlockMoments {
  double sq = 0.0;      // E t^2
  double abs = 0.0;     // E |t|
  double active = 0.0;  // E 1{|b| > thr} / D  (= E dt/db)
  double cross = 0.0;   // E w t
};

BlockMoments block_moments(double c, double s, double thr, double D) {
  BlockMoments out;
  const double tau = std::sqrt(c * c + s * s);
  if (tau == 0.0) return out;
  const double a = thr / tau;
  const double tail = std_normal_cdf(-a);
  const double dens = std_normal_pdf(a);
  out.sq = 2.0 * ((tau * tau + thr * thr) * tail - thr * tau * dens) / (D * D);
  out.abs = 2.0 * (tau * dens - thr * tail) / D;
  out.active = 2.0 * tail / D;
  out.cross = 2.0 * c * tail / D;
  out.sq = std::max(out.sq, 0.0);
  out.abs = std::max(out.abs, 0.0);
  return out;
}

}  // namespace

// Coordinates of theta split into blocks by the feature map. For p >= d
// (gamma <= 1) a fraction gamma of coordinates sees the teacher through F
// with field variance 1 + 1/gamma, the rest only see noise. For p < d every
// coordinate has variance 2 and sees a fraction of the teacher.
PriorOverlaps prior_update_branch(const ChannelHats& h, const LatentModelConfig& cfg,
                                  bool over) {
  if (!(h.q_hat >= 0.0) || !(h.V_hat > 0.0))
    throw std::domain_error("prior_update: need q_hat >= 0 and V_hat > 0");
  const double g = cfg.gamma;
  const double lam = cfg.lambda;
  const double thr = 0.5 * h.P_hat;
  PriorOverlaps o;
  if (over) {
    const double k = 1.0 + 1.0 / g;
    const double D1 = h.V_hat * k + 2.0 * lam;
    const double D2 = h.V_hat + 2.0 * lam;
    const BlockMoments b1 = block_moments(h.m_hat / std::sqrt(g), std::sqrt(h.q_hat * k), thr, D1);
    const BlockMoments b2 = block_moments(0.0, std::sqrt(h.q_hat), thr, D2);
    const double wf = std::max(0.0, 1.0 - g);
    o.m = b1.cross;
    o.q_l = b1.sq;
    o.q_f = g * b1.sq + wf * b2.sq;
    o.q = o.q_l + o.q_f;
    o.V = (1.0 + g) * b1.active + wf * b2.active;
    o.P = g * b1.abs + wf * b2.abs;
  } else {
    const double D = 2.0 * h.V_hat + 2.0 * lam;
    const BlockMoments b = block_moments(h.m_hat, std::sqrt(2.0 * h.q_hat), thr, D);
    o.m = b.cross / std::sqrt(g);
    o.q_l = b.sq;
    o.q_f = b.sq;
    o.q = o.q_l + o.q_f;
    o.V = 2.0 * b.active;
    o.P = b.abs;
  }
  return o;
}

PriorOverlaps prior_update(const ChannelHats& h, const LatentModelConfig& cfg) {
  return prior_update_branch(h, cfg, cfg.gamma <= 1.0);
}

// ---------------------------------------------------------------------------
// Fixed point

OverlapState apply_update(const OverlapState& st, const LatentModelConfig& cfg,
                          const QuadratureSpec& quad) {
  const ChannelHats h = channel_update(st, cfg, quad);
  const PriorOverlaps o = prior_update(h, cfg);
  OverlapState out = st;
  out.m_hat = h.m_hat, out.q_hat = h.q_hat, out.V_hat = h.V_hat, out.P_hat = h.P_hat;
  out.m = o.m, out.q = o.q, out.V = o.V, out.P = o.P, out.q_l = o.q_l, out.q_f = o.q_f;
  return out;
}

OverlapState solve_fixed_point(const LatentModelConfig& cfg, const SolverSettings& settings) {
  cfg.validate();
  settings.validate();
  OverlapState st = settings.init;
  st.q_l = st.q_f = 0.5 * st.q;
  st.converged = false;
  std::vector<double> trace;
  const double mu = settings.damping;
  for (int it = 1; it <= settings.max_iter; ++it) {
    OverlapState next;
    try {
      next = apply_update(st, cfg, settings.quad);
    } catch (const NumericalError& e) {
      throw NonConvergence(std::string("solve_fixed_point: ") + e.what(), st, trace);
    }
    const double res = std::max({std::abs(next.m - st.m), std::abs(next.q - st.q),
                                 std::abs(next.V - st.V), std::abs(next.P - st.P),
                                 std::abs(next.m_hat - st.m_hat), std::abs(next.q_hat - st.q_hat),
                                 std::abs(next.V_hat - st.V_hat),
                                 std::abs(next.P_hat - st.P_hat)});
    trace.push_back(res);
    if (!std::isfinite(res))
      throw NonConvergence("solve_fixed_point: non-finite update", st, trace);
    if (res < settings.tol) {
      next.iterations = it;
      next.residual = res;
      next.converged = true;
      return next;
    }
    auto damp = [mu](double fresh, double old) { return mu * fresh + (1.0 - mu) * old; };
    OverlapState mixed = next;
    mixed.m = damp(next.m, st.m);
    mixed.q = damp(next.q, st.q);
    mixed.V = damp(next.V, st.V);
    mixed.P = damp(next.P, st.P);
    mixed.q_l = damp(next.q_l, st.q_l);
    mixed.q_f = mixed.q - mixed.q_l;
    // Hats are recomputed from the mixed overlaps; keep the latest values for
    // the convergence check.
    mixed.iterations = it;
    mixed.residual = res;
    st = mixed;
  }
  throw NonConvergence("solve_fixed_point: iteration budget exhausted", st, trace);
}

}  // namespace advcons
