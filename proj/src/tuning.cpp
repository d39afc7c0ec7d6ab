#include <cmath>
#include <stdexcept>

#include "advcons/asymptotic_metrics.hpp"
#include "advcons/geometry.hpp"
#include "advcons/state_evolution.hpp"

namespace advcons {

MetricKind parse_metric(const std::string& name) {
  if (name == "clean") return MetricKind::clean;
  if (name == "robust" || name == "rob") return MetricKind::robust;
  if (name == "consistent_robust" || name == "rob_cns") return MetricKind::consistent_robust;
  if (name == "consistent_boundary" || name == "bnd_cns") return MetricKind::consistent_boundary;
  throw std::invalid_argument("unknown metric: " + name);
}

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::clean: return "clean";
    case MetricKind::robust: return "rob";
    case MetricKind::consistent_robust: return "rob_cns";
    case MetricKind::consistent_boundary: return "bnd_cns";
  }
  return "unknown";
}

double asymptotic_metric(const OverlapState& state, const LatentModelConfig& cfg,
                         MetricKind kind, double eps_tilde) {
  const OverlapPair ov = OverlapPair::from_state(state);
  if (kind == MetricKind::clean) return error_from_shift(ov, 0.0, ErrorKind::robust);
  const double qd = dual_exponent(cfg.q_att);
  const MetricsReport rep = metrics_latent(state, cfg, qd, {eps_tilde});
  switch (kind) {
    case MetricKind::robust: return rep.rob[0];
    case MetricKind::consistent_robust: return rep.rob_cns[0];
    case MetricKind::consistent_boundary: return rep.bnd_cns[0];
    default: return rep.clean;
  }
}

TuneResult tune_hyperparameters(const LatentModelConfig& base, const TuneRequest& req) {
  base.validate();
  if (!req.tune_lambda && !req.tune_r)
    throw std::invalid_argument("tune_hyperparameters: nothing to tune");
  TuneResult out;
  out.lambda = base.lambda;
  out.r = base.r;

  // Warm start each solve from the last converged state.
  OverlapState warm = req.solver.init;
  auto evaluate = [&](double lambda, double r) {
    TunePoint pt{lambda, r};
    LatentModelConfig cfg = base;
    cfg.lambda = lambda;
    cfg.r = r;
    SolverSettings s = req.solver;
    s.init = warm;
    try {
      OverlapState st = solve_fixed_point(cfg, s);
      pt.solver_converged = true;
      pt.value = asymptotic_metric(st, cfg, req.objective, req.eps_tilde);
      warm = st;
      if (pt.value < out.value) {
        out.value = pt.value;
        out.lambda = lambda;
        out.r = r;
        out.state = st;
      }
    } catch (const NumericalError&) {
      pt.value = std::numeric_limits<double>::infinity();
    }
    out.trace.push_back(pt);
    return pt.value;
  };

  const double l0 = std::log(std::max(base.lambda, 1e-8));
  const double r0 = std::log(std::max(base.r, 1e-3));
  if (req.tune_lambda != req.tune_r) {
    auto h = [&](double x) {
      return req.tune_lambda ? evaluate(std::exp(x), base.r) : evaluate(base.lambda, std::exp(x));
    };
    const ScalarMinimum res = minimize_scalar(h, req.tune_lambda ? l0 : r0, req.line);
    out.converged = res.converged && std::isfinite(out.value);
  } else {
    auto h = [&](const Eigen::VectorXd& x) { return evaluate(std::exp(x(0)), std::exp(x(1))); };
    Eigen::VectorXd x0(2);
    x0 << l0, r0;
    const NelderMeadResult res = nelder_mead(h, x0, req.simplex);
    out.converged = res.converged && std::isfinite(out.value);
  }
  if (!std::isfinite(out.value))
    throw NumericalError("tune_hyperparameters: no probed point converged");
  return out;
}

}  // namespace advcons
