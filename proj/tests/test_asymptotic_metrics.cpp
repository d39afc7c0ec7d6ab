#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "advcons/asymptotic_metrics.hpp"
#include "advcons/geometry.hpp"
#include "advcons/rng.hpp"
#include "oracles.hpp"

using namespace advcons;

namespace {

OverlapPair random_overlaps(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double q = 0.05 + 50.0 * u(gen) * u(gen);
  const double rho = -0.95 + 1.9 * u(gen);
  return {rho * std::sqrt(q), q, {}, {}, {}};
}

}  // namespace

TEST_CASE("reference overlaps from the well-specified example") {
  const OverlapPair ov{3.879, 31.786, {}, {}, {}};
  CHECK(factor_consistent_wellspec(ov, 2.0) == doctest::Approx(4.0913).epsilon(2e-5));
  CHECK(std::abs(factor_consistent_wellspec(ov, 2.0) - std::sqrt(ov.q - ov.m * ov.m)) < 1e-12);
  CHECK(clean_error_closed_form(ov) == doctest::Approx(0.2585).epsilon(2e-4));
  CHECK(error_from_shift(ov, 0.0, ErrorKind::robust) ==
        doctest::Approx(clean_error_closed_form(ov)).epsilon(1e-10));
}

TEST_CASE("clean error identity on random overlaps") {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 50; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    CHECK(std::abs(error_from_shift(ov, 0.0, ErrorKind::robust) -
                   std::acos(ov.m / std::sqrt(ov.q)) / M_PI) < 1e-8);
    CHECK(error_from_shift(ov, 0.0, ErrorKind::boundary) == 0.0);
  }
}

TEST_CASE("errors against conditioning-on-nu oracle") {
  std::mt19937_64 gen(9);
  for (int i = 0; i < 20; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    for (double s : {0.0, 0.1, 0.7, 2.5, 9.0}) {
      CHECK(error_from_shift(ov, s, ErrorKind::robust) ==
            doctest::Approx(oracle::robust_error(ov.m, ov.q, s)).epsilon(1e-8));
      CHECK(error_from_shift(ov, s, ErrorKind::boundary) ==
            doctest::Approx(oracle::boundary_error(ov.m, ov.q, s)).epsilon(1e-8));
    }
  }
}

TEST_CASE("Gaussian norm constants") {
  for (double qd : {1.0, 1.5, 2.0, 4.0}) {
    CHECK(factor_inconsistent(4.0, qd) == doctest::Approx(2.0 * gaussian_norm_constant(qd)));
  }
  CHECK(gaussian_norm_constant(2.0) == doctest::Approx(1.0));
  CHECK(gaussian_norm_constant(1.0) == doctest::Approx(std::sqrt(2.0 / M_PI)));
}

TEST_CASE("consistent factor against sampled dual distances") {
  // w = m w* + s xi with independent Gaussian teacher: the optimal kappa is
  // m and the normalized distance concentrates on s times the norm constant.
  Philox4x32 rng(77, 0);
  std::normal_distribution<double> nd;
  const Eigen::Index d = 200000;
  Eigen::VectorXd ws(d), xi(d);
  for (auto& v : ws) v = nd(rng);
  for (auto& v : xi) v = nd(rng);
  ws *= std::sqrt(double(d)) / ws.norm();
  const OverlapPair ov{1.5, 6.0, {}, {}, {}};
  const Eigen::VectorXd w = ov.m * ws + std::sqrt(ov.q - ov.m * ov.m) * xi;
  for (double qd : {1.0, 1.5, 2.0, 4.0}) {
    const double sampled =
        dual_norm_distance(w, ws, qd).distance / std::pow(double(d), 1.0 / qd);
    CHECK(sampled == doctest::Approx(factor_consistent_wellspec(ov, qd)).epsilon(0.01));
  }
}

TEST_CASE("scaling identity between consistent and unrestricted errors") {
  std::mt19937_64 gen(17);
  const std::vector<double> grid{0.0, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0};
  for (int i = 0; i < 10; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    const MetricsReport rep = metrics_wellspec(ov, 2.0, grid);
    std::vector<double> scaled;
    const double c = std::sqrt(1.0 - ov.m * ov.m / ov.q);
    for (double e : grid) scaled.push_back(e * c);
    const MetricsReport ref = metrics_wellspec(ov, 2.0, scaled);
    for (std::size_t k = 0; k < grid.size(); ++k)
      CHECK(std::abs(rep.rob_cns[k] - ref.rob[k]) < 1e-10);
  }
}

TEST_CASE("homogeneity under rescaling of the model") {
  std::mt19937_64 gen(21);
  for (int i = 0; i < 10; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    const double c = 0.3 + 3.0 * std::uniform_real_distribution<double>(0, 1)(gen);
    const OverlapPair scaled{c * ov.m, c * c * ov.q, {}, {}, {}};
    for (double s : {0.2, 1.0, 3.0}) {
      CHECK(error_from_shift(scaled, c * s, ErrorKind::robust) ==
            doctest::Approx(error_from_shift(ov, s, ErrorKind::robust)).epsilon(1e-10));
      CHECK(error_from_shift(scaled, c * s, ErrorKind::boundary) ==
            doctest::Approx(error_from_shift(ov, s, ErrorKind::boundary)).epsilon(1e-10));
    }
  }
}

TEST_CASE("bound chain and monotonicity hold exactly") {
  std::mt19937_64 gen(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const OverlapPair ov = random_overlaps(gen);
    std::vector<double> grid{0.0};
    for (int k = 0; k < 12; ++k) grid.push_back(grid.back() + 2.0 * u(gen));
    const double qd = i % 3 == 0 ? 1.0 : (i % 3 == 1 ? 2.0 : 4.0 / 3.0);
    const MetricsReport rep = metrics_wellspec(ov, qd, grid);
    CHECK(rep.chain_holds());
    for (std::size_t k = 1; k < grid.size(); ++k) {
      CHECK(rep.rob[k] >= rep.rob[k - 1]);
      CHECK(rep.rob_cns[k] >= rep.rob_cns[k - 1]);
      CHECK(rep.bnd_cns[k] >= rep.bnd_cns[k - 1]);
    }
    CHECK(rep.rob[0] == rep.clean);
    CHECK(rep.bnd_cns[0] == 0.0);
  }
}

TEST_CASE("boundary error equals the consistent excess over clean error") {
  const OverlapPair ov{1.2, 4.0, {}, {}, {}};
  const MetricsReport rep = metrics_wellspec(ov, 2.0, {0.5, 1.0, 2.0});
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(rep.rob_cns[k] - rep.clean == doctest::Approx(rep.bnd_cns[k]).epsilon(1e-12));
}

TEST_CASE("probit label weighting") {
  // Infinitely small noise reproduces the deterministic labels.
  const OverlapPair ov{1.0, 3.0, {}, {}, {}};
  const MetricsReport hard = metrics_from_shifts(ov, {0.0, 1.0}, 0.5, 0.8, Provenance::asymptotic);
  const MetricsReport soft =
      metrics_from_shifts(ov, {0.0, 1.0}, 0.5, 0.8, Provenance::asymptotic, metrics_quadrature(), 1e-10);
  CHECK(soft.clean == doctest::Approx(hard.clean).epsilon(1e-4));
  const MetricsReport noisy =
      metrics_from_shifts(ov, {0.0, 1.0}, 0.5, 0.8, Provenance::asymptotic, metrics_quadrature(), 0.5);
  CHECK(noisy.clean > hard.clean);
  CHECK(noisy.chain_holds());
}

TEST_CASE("invalid overlaps are rejected") {
  CHECK_THROWS(factor_consistent_wellspec({2.0, 1.0, {}, {}, {}}, 2.0));
  CHECK_THROWS(factor_inconsistent(-1.0, 2.0));
}

TEST_CASE("latent factors are infima over the line through the teacher") {
  for (double gamma : {0.5, 2.0}) {
    const LatentModelConfig cfg = LatentModelConfig::from_alpha_gamma(1.0, gamma);
    const OverlapState st = solve_fixed_point(cfg);
    for (double qd : {1.0, 2.0}) {
      const LatentFactor a = factor_consistent_latent(st, cfg, qd);
      const double b = factor_inconsistent_latent(st, cfg, qd);
      CHECK(a.value > 0.0);
      CHECK(a.value <= b * (1.0 + 1e-12));
      CHECK(latent_factor_objective(st, cfg, qd, 0.0) == doctest::Approx(b).epsilon(1e-8));
      for (double dk : {-0.5, -0.05, 0.05, 0.5})
        CHECK(latent_factor_objective(st, cfg, qd, a.kappa + dk) >= a.value * (1.0 - 1e-9));
      const LatentFactor alt = factor_consistent_latent(st, cfg, qd, LatentFactorForm::reweighted);
      CHECK(std::isfinite(alt.value));
      CHECK(alt.value > 0.0);
    }
  }
}

TEST_CASE("latent metrics require a converged state") {
  const LatentModelConfig cfg = LatentModelConfig::from_alpha_gamma(1.0, 0.5);
  OverlapState st = solve_fixed_point(cfg);
  st.converged = false;
  CHECK_THROWS(metrics_latent(st, cfg, 2.0, {1.0}));
}
