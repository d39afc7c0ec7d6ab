#include "advcons/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace advcons {

ModelKind parse_model(const std::string& name) {
  if (name == "wellspec") return ModelKind::wellspec;
  if (name == "latent") return ModelKind::latent;
  throw std::invalid_argument("unknown model: " + name);
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::wellspec ? "wellspec" : "latent";
}

double Dataset::field_scale() const {
  return kind == ModelKind::latent ? 1.0 / std::sqrt(double(dim())) : 1.0;
}

namespace {

// Random streams used per dataset seed.
enum Stream : std::uint64_t { kTeacher = 1, kCovariates = 2, kLabels = 3, kTest = 101 };

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sd,
                                Philox4x32& rng) {
  std::normal_distribution<double> nd(0.0, sd);
  Eigen::MatrixXd M(rows, cols);
  // Row-major fill order so the stream does not depend on storage layout.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = nd(rng);
  return M;
}

double label_of(double field, Link link, double noise_var, std::normal_distribution<double>& nd,
                Philox4x32& rng) {
  double v = field;
  if (link == Link::probit && noise_var > 0.0) v += std::sqrt(noise_var) * nd(rng);
  return v >= 0.0 ? 1.0 : -1.0;
}

Eigen::VectorXd labels_from(const Eigen::VectorXd& fields, Link link, double noise_var,
                            Philox4x32& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd y(fields.size());
  for (Eigen::Index i = 0; i < fields.size(); ++i)
    y(i) = label_of(fields(i), link, noise_var, nd, rng);
  return y;
}

double sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace

Eigen::MatrixXd feature_map(Eigen::Index p, Eigen::Index d) {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(p, d);
  if (p >= d) {
    F.topRows(d) = std::sqrt(double(p) / double(d)) * Eigen::MatrixXd::Identity(d, d);
  } else {
    F.leftCols(p) = Eigen::MatrixXd::Identity(p, p);
  }
  return F;
}

Eigen::VectorXd sample_teacher(Eigen::Index d, Philox4x32& rng) {
  Eigen::VectorXd w = gaussian_matrix(d, 1, 1.0, rng);
  return w * (std::sqrt(double(d)) / w.norm());
}

Dataset generate_wellspec(Eigen::Index d, Eigen::Index n, Link link, std::uint64_t seed,
                          double noise_var) {
  if (d < 1 || n < 1) throw std::invalid_argument("generate_wellspec: d, n must be >= 1");
  Dataset ds;
  ds.kind = ModelKind::wellspec;
  ds.link = link;
  ds.noise_var = noise_var;
  ds.seed = seed;
  Philox4x32 rt(seed, kTeacher), rx(seed, kCovariates), ry(seed, kLabels);
  ds.teacher = sample_teacher(d, rt);
  ds.X = gaussian_matrix(n, d, 1.0 / std::sqrt(double(d)), rx);
  ds.y = labels_from(ds.X * ds.teacher, link, noise_var, ry);
  return ds;
}

Dataset generate_latent(Eigen::Index d, Eigen::Index p, Eigen::Index n, Link link,
                        std::uint64_t seed, double noise_var) {
  if (d < 1 || p < 1 || n < 1) throw std::invalid_argument("generate_latent: sizes must be >= 1");
  Dataset ds;
  ds.kind = ModelKind::latent;
  ds.link = link;
  ds.noise_var = noise_var;
  ds.seed = seed;
  Philox4x32 rt(seed, kTeacher), rx(seed, kCovariates), ry(seed, kLabels);
  ds.teacher = sample_teacher(d, rt);
  ds.F = feature_map(p, d);
  ds.Z = gaussian_matrix(n, d, 1.0, rx);
  const Eigen::MatrixXd U = gaussian_matrix(n, p, 1.0, rx);
  ds.X = ds.Z * ds.F.transpose() + U;
  ds.y = labels_from(ds.Z * ds.teacher / std::sqrt(double(d)), link, noise_var, ry);
  return ds;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double dloss(Loss loss, double t) {
  if (loss == Loss::hinge) return t < 1.0 ? -1.0 : 0.0;
  return -sigmoid(-t);
}

double robust_norm(const Eigen::VectorXd& w, double s_dual) {
  return lp_norm(w, s_dual) * std::pow(double(w.size()), -1.0 / s_dual);
}

struct Newton {
  const Dataset& data;
  const TrainConfig& cfg;
  double fs;

  double objective_of_margins(const Eigen::VectorXd& t, double w2) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) s += loss_value(Loss::logistic, t(i));
    return s + cfg.lambda * w2;
  }

  // Primal Newton when dim <= n, kernel Newton on w = X^T a otherwise. Both
  // use Armijo backtracking and stop on the gradient norm.
  TrainedPredictor run() const {
    const Eigen::Index n = data.n(), p = data.dim();
    const Eigen::VectorXd& y = data.y;
    const double lam = cfg.lambda;
    TrainedPredictor out;
    out.diag.method = p <= n ? "newton-primal" : "newton-kernel";
    const bool kernel = p > n;
    Eigen::MatrixXd G;
    if (kernel) G = data.X * data.X.transpose();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(kernel ? n : 0);
    Eigen::VectorXd Xw = Eigen::VectorXd::Zero(n);

    auto state_obj = [&](const Eigen::VectorXd& xw, double w2) {
      return objective_of_margins(fs * y.cwiseProduct(xw), w2);
    };
    double obj = state_obj(Xw, 0.0);
    for (int it = 1; it <= cfg.max_iter; ++it) {
      const Eigen::VectorXd t = fs * y.cwiseProduct(Xw);
      Eigen::VectorXd lp(n), D(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double s = sigmoid(t(i));
        lp(i) = -(1.0 - s);
        D(i) = s * (1.0 - s);
      }
      const Eigen::VectorXd coef = fs * y.cwiseProduct(lp);  // d loss / d (X w)
      Eigen::VectorXd grad_w;
      Eigen::VectorXd dir_w, dir_a, dir_xw;
      double gnorm;
      if (!kernel) {
        grad_w = data.X.transpose() * coef + 2.0 * lam * w;
        gnorm = grad_w.norm();
      } else {
        const Eigen::VectorXd r = coef + 2.0 * lam * a;
        gnorm = std::sqrt(std::max(r.dot(G * r), 0.0));
        grad_w = r;  // gradient in a-coordinates, up to the factor G
      }
      out.diag.stationarity = gnorm;
      out.diag.iterations = it - 1;
      if (gnorm <= cfg.tol * std::max(1.0, obj)) {
        out.diag.converged = true;
        break;
      }
      if (!kernel) {
        Eigen::MatrixXd H = fs * fs * data.X.transpose() * D.asDiagonal() * data.X;
        H.diagonal().array() += 2.0 * lam;
        dir_w = -H.llt().solve(grad_w);
        dir_xw = data.X * dir_w;
      } else {
        // (fs^2 D G + 2 lam I) da = -r.
        Eigen::MatrixXd M = fs * fs * D.asDiagonal() * G;
        M.diagonal().array() += 2.0 * lam;
        dir_a = -M.partialPivLu().solve(grad_w);
        dir_xw = G * dir_a;
      }
      // Directional derivative: grad_w . dir_w = coef . dir_xw + 2 lam w . dir_w.
      const double wdir = kernel ? a.dot(G * dir_a) : w.dot(dir_w);
      const double dir2 = kernel ? dir_a.dot(G * dir_a) : dir_w.squaredNorm();
      const double slope = coef.dot(dir_xw) + 2.0 * lam * wdir;
      const double w2 = kernel ? a.dot(G * a) : w.squaredNorm();
      double step = 1.0, trial = obj;
      for (int ls = 0; ls < 60; ++ls) {
        const double tw2 = w2 + 2.0 * step * wdir + step * step * dir2;
        trial = state_obj(Xw + step * dir_xw, tw2);
        if (trial <= obj + 1e-4 * step * slope) break;
        step *= 0.5;
      }
      if (!(trial <= obj)) break;  // no further progress at machine precision
      Xw += step * dir_xw;
      if (kernel) a += step * dir_a;
      else w += step * dir_w;
      obj = trial;
      out.diag.iterations = it;
    }
    if (kernel) w = data.X.transpose() * a;
    out.weights = w;
    out.diag.objective = robust_objective(data, cfg, w);
    return out;
  }
};

// Projection of (v, t) onto {(w, s) : |w|_1 <= s}.
void project_l1_epigraph(Eigen::VectorXd& v, double& t) {
  const double l1 = v.cwiseAbs().sum();
  if (l1 <= t) return;
  const double top = v.cwiseAbs().maxCoeff();
  if (t <= -top) {
    v.setZero();
    t = 0.0;
    return;
  }
  // Find mu >= 0 with sum (|v_i| - mu)_+ = t + mu.
  std::vector<double> a(v.data(), v.data() + v.size());
  for (double& x : a) x = std::abs(x);
  std::sort(a.begin(), a.end(), std::greater<>());
  double cum = 0.0, mu = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    cum += a[k];
    const double cand = (cum - t) / double(k + 2);
    const double next = k + 1 < a.size() ? a[k + 1] : 0.0;
    if (cand >= next && cand <= a[k]) {
      mu = cand;
      break;
    }
    mu = cand;
  }
  mu = std::max(mu, 0.0);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double r = std::abs(v(i)) - mu;
    v(i) = r > 0 ? std::copysign(r, v(i)) : 0.0;
  }
  t += mu;
}

// Projection onto the second-order cone {|w|_2 <= s}.
void project_soc(Eigen::VectorXd& v, double& t) {
  const double nv = v.norm();
  if (nv <= t) return;
  if (nv <= -t) {
    v.setZero();
    t = 0.0;
    return;
  }
  const double s = 0.5 * (nv + t);
  v *= s / nv;
  t = s;
}

// Accelerated projected gradient over (w, t) with |w|_{s*} <= t for the
// robust objective; the loss is nonincreasing so t = |w|_{s*} at optimum.
TrainedPredictor train_fista(const Dataset& data, const TrainConfig& cfg) {
  if (cfg.loss != Loss::logistic)
    throw std::invalid_argument("train_robust_erm: robust training supports the logistic loss");
  if (cfg.s_dual != 1.0 && cfg.s_dual != 2.0)
    throw std::invalid_argument("train_robust_erm: s_dual must be 1 or 2");
  const Eigen::Index n = data.n(), p = data.dim();
  const double fs = data.field_scale();
  const double c = cfg.r * std::pow(double(p), -1.0 / cfg.s_dual);
  const Eigen::VectorXd& y = data.y;

  auto value_grad = [&](const Eigen::VectorXd& w, double t, Eigen::VectorXd* gw, double* gt) {
    const Eigen::VectorXd m = fs * y.cwiseProduct(data.X * w) - Eigen::VectorXd::Constant(n, c * t);
    double v = cfg.lambda * w.squaredNorm();
    Eigen::VectorXd lp(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      v += loss_value(Loss::logistic, m(i));
      lp(i) = dloss(Loss::logistic, m(i));
    }
    if (gw) {
      *gw = fs * data.X.transpose() * y.cwiseProduct(lp) + 2.0 * cfg.lambda * w;
      *gt = -c * lp.sum();
    }
    return v;
  };
  auto project = [&](Eigen::VectorXd& w, double& t) {
    if (cfg.s_dual == 1.0) project_l1_epigraph(w, t);
    else project_soc(w, t);
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(p), yw = w, w_prev = w;
  double t = 0.0, yt = 0.0, t_prev = 0.0;
  double L = fs * fs * data.X.squaredNorm() / 4.0 / std::max<Eigen::Index>(1, n) + 2.0 * cfg.lambda;
  double mom = 1.0;
  TrainedPredictor out;
  out.diag.method = "fista-epigraph";
  double obj = value_grad(w, t, nullptr, nullptr);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    Eigen::VectorXd gw;
    double gt;
    const double fy = value_grad(yw, yt, &gw, &gt);
    Eigen::VectorXd wn;
    double tn;
    for (int ls = 0; ls < 100; ++ls) {
      wn = yw - gw / L;
      tn = yt - gt / L;
      project(wn, tn);
      const Eigen::VectorXd dw = wn - yw;
      const double dt = tn - yt;
      const double fn = value_grad(wn, tn, nullptr, nullptr);
      if (fn <= fy + gw.dot(dw) + gt * dt + 0.5 * L * (dw.squaredNorm() + dt * dt) + 1e-12 * std::abs(fy))
        break;
      L *= 2.0;
    }
    const double mapping = L * std::sqrt((wn - yw).squaredNorm() + (tn - yt) * (tn - yt));
    const double fnew = value_grad(wn, tn, nullptr, nullptr);
    // Gradient-based adaptive restart.
    const double restart = (yw - wn).dot(wn - w) + (yt - tn) * (tn - t);
    w_prev = w, t_prev = t;
    w = wn, t = tn;
    obj = fnew;
    out.diag.iterations = it;
    out.diag.stationarity = mapping;
    if (mapping <= cfg.tol * std::max(1.0, obj)) {
      out.diag.converged = true;
      break;
    }
    if (restart > 0.0) mom = 1.0;
    const double mom_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * mom * mom));
    const double beta = (mom - 1.0) / mom_next;
    mom = mom_next;
    yw = w + beta * (w - w_prev);
    yt = t + beta * (t - t_prev);
    L *= 0.9;  // allow the step to grow again
  }
  out.weights = w;
  out.diag.objective = robust_objective(data, cfg, w);
  return out;
}

// Dual coordinate descent for the ridge-regularized hinge loss.
TrainedPredictor train_hinge_dual(const Dataset& data, const TrainConfig& cfg) {
  if (!(cfg.lambda > 0.0)) throw std::invalid_argument("hinge training requires lambda > 0");
  const Eigen::Index n = data.n(), p = data.dim();
  const double fs = data.field_scale();
  const double C = 1.0 / (2.0 * cfg.lambda);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n), w = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd qdiag(n);
  for (Eigen::Index i = 0; i < n; ++i) qdiag(i) = fs * fs * data.X.row(i).squaredNorm();
  TrainedPredictor out;
  out.diag.method = "hinge-dual-cd";
  for (int epoch = 1; epoch <= cfg.max_iter; ++epoch) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = data.y(i) * fs * data.X.row(i).dot(w) - 1.0;
      const double a_new = std::clamp(alpha(i) - g / qdiag(i), 0.0, C);
      const double delta = a_new - alpha(i);
      if (delta != 0.0) {
        w += delta * data.y(i) * fs * data.X.row(i).transpose();
        alpha(i) = a_new;
      }
    }
    // Duality gap in the original scaling (primal objective times 2 lambda).
    const Eigen::VectorXd marg = fs * data.y.cwiseProduct(data.X * w);
    const double hinge = (1.0 - marg.array()).max(0.0).sum();
    const double primal = 0.5 * w.squaredNorm() + C * hinge;
    const double dual = alpha.sum() - 0.5 * w.squaredNorm();
    const double gap = (primal - dual) * 2.0 * cfg.lambda;
    const double obj = primal * 2.0 * cfg.lambda;
    out.diag.iterations = epoch;
    out.diag.stationarity = gap;
    if (gap <= cfg.tol * std::max(1.0, obj)) {
      out.diag.converged = true;
      break;
    }
  }
  out.weights = w;
  out.diag.objective = robust_objective(data, cfg, w);
  return out;
}

}  // namespace

double robust_objective(const Dataset& data, const TrainConfig& cfg, const Eigen::VectorXd& w) {
  const double fs = data.field_scale();
  const double shift = cfg.r > 0.0 ? cfg.r * robust_norm(w, cfg.s_dual) : 0.0;
  const Eigen::VectorXd m = fs * data.y.cwiseProduct(data.X * w);
  double v = cfg.lambda * w.squaredNorm();
  for (Eigen::Index i = 0; i < m.size(); ++i) v += loss_value(cfg.loss, m(i) - shift);
  return v;
}

TrainedPredictor train_robust_erm(const Dataset& data, const TrainConfig& cfg) {
  if (!(cfg.lambda >= 0.0) || !(cfg.r >= 0.0))
    throw std::invalid_argument("train_robust_erm: lambda and r must be nonnegative");
  TrainedPredictor out;
  if (cfg.r == 0.0 && cfg.loss == Loss::logistic) {
    if (!(cfg.lambda > 0.0) && data.n() < data.dim())
      throw std::invalid_argument("train_robust_erm: lambda = 0 with n < dim is ill-posed");
    out = Newton{data, cfg, data.field_scale()}.run();
  } else if (cfg.r == 0.0) {
    out = train_hinge_dual(data, cfg);
  } else {
    out = train_fista(data, cfg);
  }
  out.overlaps = measure_overlaps(out.weights, data, cfg.s_dual);
  return out;
}

OverlapPair measure_overlaps(const Eigen::VectorXd& w, const Dataset& data, double s_dual) {
  OverlapPair ov;
  const double pw = std::pow(lp_norm(w, s_dual), s_dual);
  if (data.kind == ModelKind::wellspec) {
    const double d = double(w.size());
    ov.m = data.teacher.dot(w) / d;
    ov.q = w.squaredNorm() / d;
    ov.P = pw / d;
    return ov;
  }
  const double p = double(data.dim()), d = double(data.latent_dim());
  const Eigen::VectorXd v = data.F.transpose() * w;
  ov.m = data.teacher.dot(v) / std::sqrt(p * d);
  ov.q_l = v.squaredNorm() / p;
  ov.q_f = w.squaredNorm() / p;
  ov.q = *ov.q_l + *ov.q_f;
  ov.P = pw / p;
  return ov;
}

double worst_case_margin_shift(const Eigen::VectorXd& direction, const Eigen::VectorXd& teacher,
                               const AttackGeometry& geom, bool consistent, double field_scale) {
  if (direction.size() != teacher.size())
    throw std::invalid_argument("worst_case_margin_shift: length mismatch");
  const double norm = consistent ? dual_norm_distance(direction, teacher, geom.q_dual).distance
                                 : lp_norm(direction, geom.q_dual);
  return field_scale * geom.eps * norm;
}

std::pair<double, double> empirical_shift_factors(const Eigen::VectorXd& w, const Dataset& data,
                                                  double q_att) {
  const Eigen::Index d = data.latent_dim();
  AttackGeometry unit;
  Eigen::VectorXd dir;
  double fs;
  if (data.kind == ModelKind::wellspec) {
    unit = AttackGeometry::wellspec(q_att, 1.0, d);
    dir = w;
    fs = 1.0;
  } else {
    unit = AttackGeometry::latent(q_att, 1.0, d);
    dir = data.F.transpose() * w;
    fs = data.field_scale();
  }
  return {worst_case_margin_shift(dir, data.teacher, unit, true, fs),
          worst_case_margin_shift(dir, data.teacher, unit, false, fs)};
}

MetricsReport empirical_metrics(const Eigen::VectorXd& w, const Dataset& data, double q_att,
                                const std::vector<double>& eps_grid, const EvalSpec& spec) {
  auto [a, b] = empirical_shift_factors(w, data, q_att);
  a = std::min(a, b);
  if (spec.mode == EvalMode::plugin) {
    const OverlapPair ov = measure_overlaps(w, data);
    const double noise =
        spec.channel_weighted && data.link == Link::probit ? data.noise_var : 0.0;
    MetricsReport rep = metrics_from_shifts(ov, eps_grid, a, b, Provenance::empirical_plugin,
                                            metrics_quadrature(), noise);
    rep.seed = data.seed;
    return rep;
  }

  const Eigen::Index d = data.latent_dim();
  const Eigen::Index batch = 4096;
  Philox4x32 rng(spec.seed, kTest);
  std::normal_distribution<double> nd;
  const std::size_t k = eps_grid.size();
  std::vector<double> n_rob(k, 0.0), n_cns(k, 0.0), n_bnd(k, 0.0);
  double n_clean = 0.0;
  const Eigen::VectorXd dir = data.kind == ModelKind::latent ? Eigen::VectorXd(data.F.transpose() * w) : w;
  for (Eigen::Index start = 0; start < spec.n_test; start += batch) {
    const Eigen::Index m = std::min(batch, spec.n_test - start);
    Eigen::VectorXd nu, mu;
    if (data.kind == ModelKind::wellspec) {
      const Eigen::MatrixXd X = gaussian_matrix(m, d, 1.0 / std::sqrt(double(d)), rng);
      nu = X * data.teacher;
      mu = X * w;
    } else {
      const Eigen::Index p = data.dim();
      const Eigen::MatrixXd Z = gaussian_matrix(m, d, 1.0, rng);
      const Eigen::MatrixXd U = gaussian_matrix(m, p, 1.0, rng);
      nu = Z * data.teacher / std::sqrt(double(d));
      mu = (Z * dir + U * w) / std::sqrt(double(p));
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double y = label_of(nu(i), data.link, data.noise_var, nd, rng);
      const double margin = y * mu(i);
      if (margin < 0.0) n_clean += 1.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double sc = a * eps_grid[j], si = b * eps_grid[j];
        if (margin < si) n_rob[j] += 1.0;
        if (margin < sc) n_cns[j] += 1.0;
        if (margin >= 0.0 && margin < sc) n_bnd[j] += 1.0;
      }
    }
  }
  MetricsReport rep;
  rep.eps_grid = eps_grid;
  rep.provenance = Provenance::empirical_montecarlo;
  rep.shift_consistent = a;
  rep.shift_inconsistent = b;
  rep.seed = spec.seed;
  const double N = double(spec.n_test);
  rep.clean = n_clean / N;
  for (std::size_t j = 0; j < k; ++j) {
    rep.rob.push_back(n_rob[j] / N);
    rep.rob_cns.push_back(n_cns[j] / N);
    rep.bnd_cns.push_back(n_bnd[j] / N);
  }
  return rep;
}

}  // namespace advcons
