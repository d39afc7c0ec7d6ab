// Acceptance checks. Prints one PASS/FAIL line per criterion and exits with
// a nonzero status if any criterion fails. Pass criterion numbers as
// arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "advcons/asymptotic_metrics.hpp"
#include "advcons/experiments.hpp"
#include "advcons/geometry.hpp"
#include "advcons/simulation.hpp"
#include "advcons/state_evolution.hpp"
#include "oracles.hpp"

using namespace advcons;

namespace {

// Pinned tolerances.
constexpr double kClean = 1e-8;
constexpr double kGammaExact = 1e-12;
constexpr double kGammaSampled = 0.01;
constexpr double kScaling = 1e-10;
constexpr double kExistenceSigmas = 3.0;
constexpr double kExistenceFraction = 0.95;
constexpr double kOracle = 1e-4;
constexpr double kSolverResidual = 1e-5;
constexpr double kDamping = 1e-4;
constexpr double kContinuity = 1e-8;
constexpr double kSimSigmas = 3.0;
constexpr double kRichardson = 0.05;
constexpr double kProxGrid = 1e-8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

OverlapPair random_overlaps(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double q = 0.05 + 50.0 * u(gen) * u(gen);
  const double rho = -0.95 + 1.9 * u(gen);
  return {rho * std::sqrt(q), q, {}, {}, {}};
}

std::vector<double> random_grid(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> g{0.0};
  const int n = 3 + int(6 * u(gen));
  for (int k = 0; k < n; ++k) g.push_back(g.back() + 1.5 * u(gen));
  return g;
}

double random_q_att(std::mt19937_64& gen) {
  static const double qs[] = {1.5, 2.0, 4.0, kInf};
  return qs[gen() % 4];
}

Eigen::VectorXd gaussian(Eigen::Index d, Philox4x32& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(d);
  for (auto& x : v) x = nd(rng);
  return v;
}

Outcome bound_chain() {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int total = 0, good = 0;
  // Asymptotic, well-specified.
  for (int i = 0; i < 50; ++i, ++total)
    good += metrics_wellspec(random_overlaps(gen), dual_exponent(random_q_att(gen)), random_grid(gen))
                .chain_holds();
  // Asymptotic, latent.
  for (int i = 0; i < 50; ++i, ++total) {
    LatentModelConfig cfg = LatentModelConfig::from_alpha_gamma(0.3 + 2.5 * u(gen), 0.3 + 2.5 * u(gen));
    cfg.r = i % 2 ? 0.1 * u(gen) : 0.0;
    try {
      const OverlapState st = solve_fixed_point(cfg);
      good += metrics_latent(st, cfg, dual_exponent(random_q_att(gen)), random_grid(gen)).chain_holds();
    } catch (const NumericalError&) {
      // A failed solve produces no metrics and counts as a failure.
    }
  }
  // Empirical, both models, plugin and Monte Carlo evaluation.
  for (int i = 0; i < 100; ++i, ++total) {
    const bool latent = i % 2;
    const Eigen::Index d = 10 + Eigen::Index(40 * u(gen));
    const Eigen::Index n = 10 + Eigen::Index(60 * u(gen));
    const Dataset ds = latent ? generate_latent(d, d + Eigen::Index(40 * u(gen)), n, Link::sign, i)
                              : generate_wellspec(d, n, Link::sign, i);
    const TrainedPredictor t = train_robust_erm(ds, TrainConfig{});
    EvalSpec es;
    es.mode = (i / 2) % 2 ? EvalMode::montecarlo : EvalMode::plugin;
    es.n_test = 20000;
    es.seed = std::uint64_t(i);
    good += empirical_metrics(t.weights, ds, random_q_att(gen), random_grid(gen), es).chain_holds();
  }
  return {good == total, std::to_string(good) + "/" + std::to_string(total) + " configurations"};
}

Outcome clean_identity() {
  std::mt19937_64 gen(2);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    worst = std::max(worst, std::abs(error_from_shift(ov, 0.0, ErrorKind::robust) -
                                     std::acos(ov.m / std::sqrt(ov.q)) / M_PI));
  }
  return {worst <= kClean, fmt("max deviation %.2e", worst)};
}

Outcome gamma_constants() {
  std::mt19937_64 gen(3);
  double worst_exact = 0.0;
  for (int i = 0; i < 50; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    worst_exact = std::max(worst_exact, std::abs(factor_consistent_wellspec(ov, 2.0) -
                                                 std::sqrt(ov.q - ov.m * ov.m)));
  }
  Philox4x32 rng(3, 0);
  const Eigen::Index d = 100000;
  const Eigen::VectorXd g = gaussian(d, rng);
  double worst_rel = 0.0;
  for (double p : {1.0, 1.5, 2.0, 4.0}) {
    const double sampled = lp_norm(g, p) / std::pow(double(d), 1.0 / p);
    worst_rel = std::max(worst_rel, std::abs(sampled / gaussian_norm_constant(p) - 1.0));
  }
  return {worst_exact <= kGammaExact && worst_rel <= kGammaSampled,
          fmt("exact %.2e, ", worst_exact) + fmt("sampled rel %.2e", worst_rel)};
}

Outcome scaling_identity() {
  std::mt19937_64 gen(4);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    const std::vector<double> grid = random_grid(gen);
    std::vector<double> scaled;
    for (double e : grid) scaled.push_back(e * std::sqrt(1.0 - ov.m * ov.m / ov.q));
    const MetricsReport a = metrics_wellspec(ov, 2.0, grid);
    const MetricsReport b = metrics_wellspec(ov, 2.0, scaled);
    for (std::size_t k = 0; k < grid.size(); ++k)
      worst = std::max(worst, std::abs(a.rob_cns[k] - b.rob[k]));
  }
  return {worst <= kScaling, fmt("max deviation %.2e", worst)};
}

Outcome existence() {
  ExperimentConfig cfg;
  cfg.d_list = {10};
  cfg.q_att_list = {2.0, kInf};
  cfg.n_mc = 1000;
  cfg.eps_grid.clear();
  for (int k = 1; k <= 20; ++k) cfg.eps_grid.push_back(0.02 * k);
  int total = 0, within = 0;
  for (ModelKind kind : {ModelKind::wellspec, ModelKind::latent}) {
    cfg.model = kind;
    for (std::uint64_t seed : {1, 2, 3}) {
      cfg.seed = seed;
      const Table t = cmd_existence(cfg);
      const auto col = [&](const std::string& name) {
        return std::size_t(std::find(t.columns.begin(), t.columns.end(), name) - t.columns.begin());
      };
      for (const auto& row : t.rows) {
        const double th = std::stod(row[col("p_theory")]);
        const double mc = std::stod(row[col("p_montecarlo")]);
        const double se = std::sqrt(th * (1.0 - th) / cfg.n_mc);
        ++total;
        within += std::abs(th - mc) <= kExistenceSigmas * se + 1e-12;
      }
    }
  }
  const double frac = double(within) / total;
  return {frac >= kExistenceFraction,
          std::to_string(within) + "/" + std::to_string(total) + " grid points within 3 SE"};
}

Outcome oracle_equivalence() {
  Philox4x32 rng(6, 0);
  double worst = 0.0;
  int count = 0;
  for (double q : {1.5, 2.0, 4.0, kInf}) {
    for (int rep = 0; rep < 13; ++rep, ++count) {
      const Eigen::Index d = 2 + rep % 7;
      LinearPair<double> pair;
      pair.teacher = gaussian(d, rng);
      pair.teacher *= std::sqrt(double(d)) / pair.teacher.norm();
      pair.model = gaussian(d, rng);
      const double eps = 0.25 + 0.05 * rep;
      const AttackGeometry geom = AttackGeometry::raw(q, eps);
      const double ref = oracle::constrained_max(pair.model, pair.teacher, q, eps, true);
      const double ref_all = oracle::constrained_max(pair.model, pair.teacher, q, eps, false);
      const double shift = worst_case_margin_shift(pair.model, pair.teacher, geom, true);
      const double shift_all = worst_case_margin_shift(pair.model, pair.teacher, geom, false);
      const Eigen::VectorXd x = gaussian(d, rng);
      const Eigen::VectorXd delta = craft_consistent_attack(pair, x, geom);
      const double achieved = (pair.model.dot(x) > 0 ? -1.0 : 1.0) * pair.model.dot(delta);
      double err = std::max({std::abs(shift - ref), std::abs(shift_all - ref_all),
                             std::abs(achieved - ref)});
      // Feasibility violations count as errors of the same size.
      err = std::max(err, lp_norm(delta, q) - eps);
      err = std::max(err, std::abs(pair.teacher.dot(delta)) / pair.teacher.norm());
      worst = std::max(worst, err);
    }
  }
  return {worst <= kOracle, std::to_string(count) + " instances, max deviation " + fmt("%.2e", worst)};
}

Outcome fixed_point() {
  const double alphas[] = {0.5, 1.0, 2.0, 3.0, 5.0};
  const double gammas[] = {0.25, 0.5, 1.0, 2.0};
  int solved = 0, total = 0;
  double worst_damp = 0.0;
  for (double r : {0.0, 0.1}) {
    for (double a : alphas) {
      for (double g : gammas) {
        LatentModelConfig cfg = LatentModelConfig::from_alpha_gamma(a, g);
        cfg.r = r;
        ++total;
        try {
          SolverSettings s1, s2;
          const OverlapState st = solve_fixed_point(cfg, s1);
          solved += st.converged && st.residual < kSolverResidual;
          s1.tol = s2.tol = 1e-9;
          s2.damping = 0.8;
          const OverlapState x = solve_fixed_point(cfg, s1), y = solve_fixed_point(cfg, s2);
          worst_damp = std::max({worst_damp, std::abs(x.m - y.m), std::abs(x.q - y.q),
                                 std::abs(x.V - y.V), std::abs(x.P - y.P)});
        } catch (const NumericalError&) {
          worst_damp = kInf;
        }
      }
    }
  }
  double worst_branch = 0.0;
  for (double r : {0.0, 0.1}) {
    LatentModelConfig cfg = LatentModelConfig::from_alpha_gamma(1.0, 1.0);
    cfg.r = r;
    const OverlapState st = solve_fixed_point(cfg);
    const ChannelHats h{st.m_hat, st.q_hat, st.V_hat, st.P_hat};
    const PriorOverlaps a = prior_update_branch(h, cfg, true);
    const PriorOverlaps b = prior_update_branch(h, cfg, false);
    worst_branch = std::max({worst_branch, std::abs(a.m - b.m), std::abs(a.q - b.q),
                             std::abs(a.V - b.V), std::abs(a.P - b.P)});
  }
  return {solved == total && worst_damp <= kDamping && worst_branch <= kContinuity,
          std::to_string(solved) + "/" + std::to_string(total) + " converged, damping " +
              fmt("%.2e", worst_damp) + ", branch gap " + fmt("%.2e", worst_branch)};
}

Outcome theory_vs_simulation() {
  const std::pair<double, double> points[] = {{0.5, 0.5}, {1.0, 0.5}, {1.0, 2.0}, {2.0, 1.0}};
  int total = 0, within = 0;
  double worst_z = 0.0;
  std::string worst_label;
  for (auto [alpha, gamma] : points) {
    ExperimentConfig cfg;
    cfg.model = ModelKind::latent;
    cfg.sweep_axis = "none";
    cfg.fixed = LatentModelConfig::from_alpha_gamma(alpha, gamma);
    cfg.fixed.lambda = 1e-3;
    cfg.fixed.q_att = 2.0;
    cfg.eps_grid = {0.5, 1.0, 2.0};
    cfg.d = 500;
    cfg.repetitions = 10;
    cfg.seed = 2025;
    const Table t = cmd_compare(cfg);
    const auto col = [&](const std::string& name) {
      return std::size_t(std::find(t.columns.begin(), t.columns.end(), name) - t.columns.begin());
    };
    for (const auto& row : t.rows) {
      const std::string quantity = row[col("quantity")];
      if (quantity == "clean") continue;  // not among the checked quantities
      const double z = std::stod(row[col("z_score")]);
      ++total;
      const bool ok = row[col("status")] == "ok" && z <= kSimSigmas;
      within += ok;
      if (!(z <= worst_z)) {
        worst_z = z;
        worst_label = quantity + " at (" + format_number(alpha) + ", " + format_number(gamma) +
                      ") eps " + row[col("eps_tilde")];
      }
    }
  }
  return {within == total, std::to_string(within) + "/" + std::to_string(total) +
                               " within 3 SE, largest z " + fmt("%.2f", worst_z) + " (" +
                               worst_label + ")"};
}

Outcome prox_numerics() {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int expansive = 0;
  for (int i = 0; i < 1000; ++i) {
    const Loss loss = i % 2 ? Loss::logistic : Loss::hinge;
    const int y = i % 3 ? 1 : -1;
    const double V = 0.01 + 10.0 * u(gen), shift = u(gen);
    const double a = -10.0 + 20.0 * u(gen), b = -10.0 + 20.0 * u(gen);
    const double gap = std::abs(prox_shifted_loss(loss, y, a, V, shift) -
                                prox_shifted_loss(loss, y, b, V, shift));
    expansive += gap > std::abs(a - b) * (1.0 + 1e-12) + 1e-13;
    const double thr = u(gen), Lam = 0.1 + u(gen);
    const double egap = std::abs(prox_elastic_net(a, Lam, thr, 1e-3) - prox_elastic_net(b, Lam, thr, 1e-3));
    // As a prox in omega = v / Lambda the map must be nonexpansive.
    expansive += egap > std::abs(a - b) / Lam * (1.0 + 1e-12);
  }
  double worst_rich = 0.0, worst_grid = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Loss loss = i % 2 ? Loss::logistic : Loss::hinge;
    const int y = i % 4 < 2 ? 1 : -1;
    const double omega = -6.0 + 12.0 * u(gen), V = 0.05 + 5.0 * u(gen), shift = 0.5 * u(gen);
    worst_grid = std::max(worst_grid, std::abs(prox_shifted_loss(loss, y, omega, V, shift) -
                                               oracle::prox(loss == Loss::logistic, y, omega, V, shift)));
    if (loss == Loss::logistic) {
      const double h = 1e-3;
      auto z = [&](double w) { return prox_shifted_loss(loss, y, w, V, shift); };
      const double d1 = (z(omega + h) - z(omega - h)) / (2 * h);
      const double d2 = (z(omega + h / 2) - z(omega - h / 2)) / h;
      const double rich = (4 * d2 - d1) / 3;
      const double an = prox_shifted_loss_point(loss, y, omega, V, shift).dz_domega;
      worst_rich = std::max(worst_rich, std::abs(an - rich) / std::abs(rich));
    }
  }
  return {expansive == 0 && worst_rich <= kRichardson && worst_grid <= kProxGrid,
          std::to_string(expansive) + " expansive pairs, Richardson rel " + fmt("%.2e", worst_rich) +
              ", grid " + fmt("%.2e", worst_grid)};
}

Outcome psi_sweep() {
  ExperimentConfig cfg;
  cfg.sweep_axis = "psi";
  cfg.fixed = LatentModelConfig::from_alpha_psi(1.0, 1.0);
  cfg.grid = {4, 8, 16, 32, 64};
  cfg.eps_grid = {1.0};
  const Table t = cmd_asymptotic(cfg);
  const auto col = [&](const std::string& name) {
    return std::size_t(std::find(t.columns.begin(), t.columns.end(), name) - t.columns.begin());
  };
  bool ok = t.failed_rows == 0;
  std::ostringstream detail;
  double prev_cns = kInf, prev_bnd = -kInf;
  for (const auto& row : t.rows) {
    const double cns = std::stod(row[col("rob_cns")]), bnd = std::stod(row[col("bnd_cns")]);
    ok = ok && cns < prev_cns && bnd > prev_bnd;
    prev_cns = cns;
    prev_bnd = bnd;
    detail << "psi " << row[col("psi")] << ": cns " << fmt("%.4f", cns) << " bnd "
           << fmt("%.4f", bnd) << "; ";
  }
  return {ok, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"bound chain 0 <= bnd <= rob_cns <= rob <= 1", bound_chain},
      {"clean error identity", clean_identity},
      {"Gaussian norm constants", gamma_constants},
      {"consistent/unrestricted scaling identity", scaling_identity},
      {"existence probabilities vs Monte Carlo", existence},
      {"attack oracles at small dimension", oracle_equivalence},
      {"fixed-point solver convergence and stability", fixed_point},
      {"theory vs simulation at d = 500", theory_vs_simulation},
      {"proximal numerics", prox_numerics},
      {"overparameterization sweep ordering", psi_sweep}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id,
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
