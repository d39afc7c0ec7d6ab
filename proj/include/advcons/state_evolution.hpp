#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "advcons/special_math.hpp"

namespace advcons {

enum class Loss { logistic, hinge };
enum class Link { sign, probit };

Loss parse_loss(const std::string& name);
Link parse_link(const std::string& name);
std::string to_string(Loss loss);
std::string to_string(Link link);

/// Order parameters of the latent-model fixed point and their conjugates.
///
/// Normalization: with z ~ N(0, I_d), u ~ N(0, I_p), x = F z + u, the teacher
/// field is <w*, z>/sqrt(d) and the model field <theta, x>/sqrt(p). Then
///   m   = theta^T F w* / sqrt(p d)   (field covariance)
///   q   = theta^T (F F^T + I) theta / p   (model field variance)
///   q_l = theta^T F F^T theta / p,  q_f = |theta|^2 / p,  q = q_l + q_f
///   P   = |theta|_1 / p
/// so (m, q) enter the error formulas directly.
struct OverlapState {
  double m = 0.1;
  double q = 1.0;
  double V = 1.0;
  double P = 0.1;
  double m_hat = 0.0;
  double q_hat = 0.0;
  double V_hat = 0.0;
  double P_hat = 0.0;
  double q_l = 0.5;
  double q_f = 0.5;

  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;

  /// Throws std::domain_error if an invariant is violated.
  void validate() const;
  /// Flat key/value view for CSV emission.
  std::vector<std::pair<std::string, double>> record() const;
};

struct LatentModelConfig {
  double alpha = 1.0;   // n / d
  double psi = 2.0;     // p / n
  double gamma = 0.5;   // d / p = 1 / (alpha psi)
  double lambda = 1e-3; // ridge strength
  double r = 0.0;       // rescaled training radius
  double s_dual = 1.0;  // dual exponent of the training geometry
  double q_att = 2.0;   // attack exponent used at evaluation
  Loss loss = Loss::logistic;
  Link link = Link::sign;
  double noise_var = 0.0;  // probit link: label flip noise variance

  static LatentModelConfig from_alpha_gamma(double alpha, double gamma);
  static LatentModelConfig from_alpha_psi(double alpha, double psi);
  void validate() const;
};

struct SolverSettings {
  double damping = 0.5;
  double tol = 1e-5;
  int max_iter = 20000;
  OverlapState init{};
  QuadratureSpec quad{};

  void validate() const;
};

class NonConvergence : public NumericalError {
 public:
  NonConvergence(const std::string& msg, OverlapState last, std::vector<double> trace)
      : NumericalError(msg), last_(last), trace_(std::move(trace)) {}
  const OverlapState& last_state() const noexcept { return last_; }
  const std::vector<double>& residual_trace() const noexcept { return trace_; }

 private:
  OverlapState last_;
  std::vector<double> trace_;
};

/// Z0(y, omega, V) = E_{z ~ N(omega, V)} P(y | z).
double Z0_channel(int y, double omega, double V, Link link, double noise_var = 0.0);
double dZ0_domega(int y, double omega, double V, Link link, double noise_var = 0.0);

struct ProxPoint {
  double z = 0.0;         // proximal point
  double dz_domega = 0.0; // derivative of the proximal point in omega
};

/// argmin_z loss(y z - shift) + (z - omega)^2 / (2V), with its omega-derivative
/// obtained by implicit differentiation of the stationarity condition.
ProxPoint prox_shifted_loss_point(Loss loss, int y, double omega, double V, double shift);
double prox_shifted_loss(Loss loss, int y, double omega, double V, double shift);
/// f_l = (prox - omega) / V and its omega-derivative.
std::pair<double, double> f_loss(Loss loss, int y, double omega, double V, double shift);

double loss_value(Loss loss, double t);

/// sign(v) max(|v| - thr, 0) / (Lambda + 2 lambda): minimizer of
/// lambda z^2 + thr |z| + Lambda z^2 / 2 - v z.
double prox_elastic_net(double v, double Lambda, double thr, double lambda);

struct ChannelHats {
  double m_hat = 0.0;
  double q_hat = 0.0;
  double V_hat = 0.0;
  double P_hat = 0.0;
};

struct PriorOverlaps {
  double m = 0.0;
  double q = 0.0;
  double V = 0.0;
  double P = 0.0;
  double q_l = 0.0;
  double q_f = 0.0;
};

ChannelHats channel_update(const OverlapState& state, const LatentModelConfig& cfg,
                           const QuadratureSpec& quad = {});
PriorOverlaps prior_update(const ChannelHats& hats, const LatentModelConfig& cfg);
/// Same as prior_update but forcing a particular branch formula (true for the
/// p >= d branch). Used to check continuity at gamma = 1.
PriorOverlaps prior_update_branch(const ChannelHats& hats, const LatentModelConfig& cfg,
                                  bool overparameterized_branch);

/// Teacher-reweighting partition function Z_w*(rho, Lambda) for a standard
/// Gaussian teacher coordinate.
double Zw_star(double rho, double Lambda);
double dZw_star_drho(double rho, double Lambda);

OverlapState solve_fixed_point(const LatentModelConfig& cfg, const SolverSettings& settings = {});

/// One undamped channel+prior sweep applied to `state`.
OverlapState apply_update(const OverlapState& state, const LatentModelConfig& cfg,
                          const QuadratureSpec& quad = {});

enum class MetricKind { clean, robust, consistent_robust, consistent_boundary };
MetricKind parse_metric(const std::string& name);
std::string to_string(MetricKind kind);

struct TuneRequest {
  MetricKind objective = MetricKind::clean;
  double eps_tilde = 0.0;
  bool tune_lambda = true;
  bool tune_r = false;
  SolverSettings solver{};
  NelderMeadSpec simplex{};
  MinimizeSpec line{1e-3, 60, 1.0};
};

struct TunePoint {
  double lambda = 0.0;
  double r = 0.0;
  double value = std::numeric_limits<double>::infinity();
  bool solver_converged = false;
};

struct TuneResult {
  double lambda = 0.0;
  double r = 0.0;
  double value = std::numeric_limits<double>::infinity();
  OverlapState state{};
  std::vector<TunePoint> trace;
  bool converged = false;
};

/// Evaluate the selected asymptotic metric at a converged state.
double asymptotic_metric(const OverlapState& state, const LatentModelConfig& cfg,
                         MetricKind kind, double eps_tilde);

/// Minimize an asymptotic metric over log lambda and/or log r.
TuneResult tune_hyperparameters(const LatentModelConfig& cfg, const TuneRequest& req);

}  // namespace advcons
