#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "advcons/simulation.hpp"
#include "advcons/state_evolution.hpp"

namespace advcons {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key/value configuration with optional [section] headers. Keys in
/// [common] apply to every subcommand; keys in the subcommand's own section
/// override them.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  /// Merged view of [common] and [section].
  std::map<std::string, std::string> view(const std::string& section) const;
  void set(const std::string& section, const std::string& key, const std::string& value);

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct ExperimentConfig {
  ModelKind model = ModelKind::latent;
  std::string sweep_axis = "alpha";  // alpha | psi | gamma | lambda | r | none
  std::vector<double> grid{1.0};
  LatentModelConfig fixed{};
  std::vector<double> eps_grid{0.0, 0.5, 1.0, 2.0};
  int repetitions = 10;
  Eigen::Index d = 500;
  std::uint64_t seed = 0;
  SolverSettings solver{};
  EvalMode eval_mode = EvalMode::plugin;
  Eigen::Index n_test = 100000;

  // Well-specified theory inputs (overlaps are not predicted for this model).
  double overlap_m = 3.879;
  double overlap_q = 31.786;

  // existence subcommand
  std::vector<double> q_att_list{2.0};
  std::vector<double> d_list{10};
  double existence_m = 0.5;
  int n_mc = 1000;

  // tune subcommand
  MetricKind objective = MetricKind::clean;
  bool tune_lambda = true;
  bool tune_r = false;

  int threads = 1;
  /// Destination file; empty means standard output.
  std::string output_path;

  /// Build from a merged key/value view; unknown keys are rejected.
  static ExperimentConfig from_map(const std::map<std::string, std::string>& kv);
  void validate() const;
  /// Model configuration at one sweep value.
  LatentModelConfig at(double sweep_value) const;
};

/// Result table. Rows are self-describing: every row carries the schema
/// version, seed and full parameter echo.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  int failed_rows = 0;

  void write_csv(std::ostream& os) const;
  void write_json(std::ostream& os) const;
};

/// Run `count` tasks on `threads` workers; results are returned in index order.
std::vector<std::vector<std::vector<std::string>>> run_ordered(
    int count, int threads, const std::function<std::vector<std::vector<std::string>>(int)>& task);

Table cmd_existence(const ExperimentConfig& cfg);
Table cmd_asymptotic(const ExperimentConfig& cfg);
Table cmd_simulate(const ExperimentConfig& cfg);
Table cmd_tune(const ExperimentConfig& cfg);
Table cmd_compare(const ExperimentConfig& cfg);

/// Locale-independent shortest round-trip formatting.
std::string format_number(double v);

}  // namespace advcons
