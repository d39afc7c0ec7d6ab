#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "advcons/asymptotic_metrics.hpp"
#include "advcons/geometry.hpp"
#include "advcons/rng.hpp"
#include "advcons/state_evolution.hpp"

namespace advcons {

enum class ModelKind { wellspec, latent };
ModelKind parse_model(const std::string& name);
std::string to_string(ModelKind kind);

/// A training set plus the generative model needed to evaluate predictors.
///
/// Well-specified: x ~ N(0, I_d / d), teacher field <w*, x>, model field <w, x>.
/// Latent: z ~ N(0, I_d), u ~ N(0, I_p), x = F z + u, teacher field
/// <w*, z>/sqrt(d), model field <theta, x>/sqrt(p).
struct Dataset {
  ModelKind kind = ModelKind::wellspec;
  Eigen::MatrixXd X;        // n x dim
  Eigen::VectorXd y;        // +-1
  Eigen::VectorXd teacher;  // length d, norm sqrt(d)
  Eigen::MatrixXd F;        // p x d (latent only)
  Eigen::MatrixXd Z;        // n x d latent draws (latent only)
  Link link = Link::sign;
  double noise_var = 0.0;
  std::uint64_t seed = 0;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
  Eigen::Index latent_dim() const { return teacher.size(); }
  /// Multiplier turning <w, x> into the model field.
  double field_scale() const;
};

Eigen::MatrixXd feature_map(Eigen::Index p, Eigen::Index d);
/// I.i.d. normal coordinates rescaled to norm sqrt(d).
Eigen::VectorXd sample_teacher(Eigen::Index d, Philox4x32& rng);

Dataset generate_wellspec(Eigen::Index d, Eigen::Index n, Link link, std::uint64_t seed,
                          double noise_var = 0.0);
Dataset generate_latent(Eigen::Index d, Eigen::Index p, Eigen::Index n, Link link,
                        std::uint64_t seed, double noise_var = 0.0);

/// Objective: sum_i loss(y_i s <w, x_i> - r N(w)) + lambda |w|^2 with s the
/// field scale and N(w) = (|w|_{s*}^{s*} / dim)^{1/s*}.
struct TrainConfig {
  Loss loss = Loss::logistic;
  double lambda = 1e-3;
  double r = 0.0;
  double s_dual = 1.0;
  double tol = 1e-8;
  int max_iter = 20000;
};

struct OptimizerDiagnostics {
  double objective = 0.0;
  double stationarity = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string method;
};

struct TrainedPredictor {
  Eigen::VectorXd weights;
  OverlapPair overlaps;
  OptimizerDiagnostics diag;
};

double robust_objective(const Dataset& data, const TrainConfig& cfg, const Eigen::VectorXd& w);
TrainedPredictor train_robust_erm(const Dataset& data, const TrainConfig& cfg);

/// Measured local-field covariances (and latent extras). P uses exponent s_dual.
OverlapPair measure_overlaps(const Eigen::VectorXd& weights, const Dataset& data,
                             double s_dual = 1.0);

/// Worst-case decrease of the model field under an attack of radius geom.eps,
/// restricted (consistent) or not to directions orthogonal to the teacher.
/// `direction` lives in the attacked space; `field_scale` converts to field
/// units.
double worst_case_margin_shift(const Eigen::VectorXd& direction, const Eigen::VectorXd& teacher,
                               const AttackGeometry& geom, bool consistent,
                               double field_scale = 1.0);

enum class EvalMode { plugin, montecarlo };

struct EvalSpec {
  EvalMode mode = EvalMode::plugin;
  Eigen::Index n_test = 100000;
  std::uint64_t seed = 0;
  /// Plugin mode: weight by label probabilities instead of the sign of the
  /// teacher field (only differs for the probit link).
  bool channel_weighted = false;
};

/// Field shifts per unit eps_tilde for consistent and unrestricted attacks.
std::pair<double, double> empirical_shift_factors(const Eigen::VectorXd& weights,
                                                  const Dataset& data, double q_att);

MetricsReport empirical_metrics(const Eigen::VectorXd& weights, const Dataset& data,
                                double q_att, const std::vector<double>& eps_grid,
                                const EvalSpec& spec = {});

}  // namespace advcons
