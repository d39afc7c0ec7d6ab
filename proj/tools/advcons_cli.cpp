// Command-line driver for the experiment pipelines.
//
// Exit codes: 0 success, 1 partial result (some rows failed, or the run
// aborted on a numerical or I/O error), 2 invalid configuration or usage.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advcons/experiments.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool json = false;
  std::vector<std::string> overrides;
};

int run(const std::string& name, const Options& opt) {
  using namespace advcons;
  KeyValueConfig kv = opt.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(opt.config);
  for (const auto& s : opt.overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + s);
    kv.set(name, s.substr(0, eq), s.substr(eq + 1));
  }
  if (opt.seed) kv.set(name, "seed", std::to_string(*opt.seed));
  if (opt.threads) kv.set(name, "threads", std::to_string(*opt.threads));
  const ExperimentConfig cfg = ExperimentConfig::from_map(kv.view(name));

  Table table;
  if (name == "existence") table = cmd_existence(cfg);
  else if (name == "asymptotic") table = cmd_asymptotic(cfg);
  else if (name == "simulate") table = cmd_simulate(cfg);
  else if (name == "tune") table = cmd_tune(cfg);
  else table = cmd_compare(cfg);

  const std::string path = opt.out.empty() ? cfg.output_path : opt.out;
  std::ofstream file;
  if (!path.empty()) {
    file.open(path);
    if (!file) throw std::runtime_error("cannot open output file: " + path);
  }
  std::ostream& os = path.empty() ? std::cout : file;
  if (opt.json) table.write_json(os);
  else table.write_csv(os);
  if (!path.empty() && !file) throw std::runtime_error("failed writing output file: " + path);
  if (table.failed_rows > 0) {
    std::cerr << table.failed_rows << " row(s) did not complete; see the status column\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial consistency experiments"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"existence", "Probability that a consistent attack exists"},
      {"asymptotic", "Solve the fixed-point equations and report asymptotic errors"},
      {"simulate", "Train estimators on synthetic data and measure errors"},
      {"tune", "Optimise regularisation and robustness radius in the asymptotic limit"},
      {"compare", "Compare asymptotic predictions with simulations"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "INI configuration file");
    sub->add_option("--out", opt.out, "Output file (default: stdout)");
    sub->add_option("--seed", opt.seed, "Base random seed");
    sub->add_option("--threads", opt.threads, "Worker threads");
    sub->add_flag("--json", opt.json, "Emit JSON instead of CSV");
    sub->add_option("--set", opt.overrides, "Override a configuration key (key=value)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run(app.get_subcommands().front()->get_name(), opt);
  } catch (const advcons::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
