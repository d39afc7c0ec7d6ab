#include "advcons/experiments.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "advcons/geometry.hpp"

namespace advcons {

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "inf" || t == "infinity") return kInf;
  double out = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError("invalid number for '" + key + "': " + v);
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  long long out = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError("invalid integer for '" + key + "': " + v);
  return out;
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(to_double(key, item));
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("invalid boolean for '" + key + "': " + v);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::string section = "common";
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    cfg.sections_[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::map<std::string, std::string> KeyValueConfig::view(const std::string& section) const {
  std::map<std::string, std::string> out;
  if (auto it = sections_.find("common"); it != sections_.end()) out = it->second;
  if (auto it = sections_.find(section); it != sections_.end())
    for (const auto& [k, v] : it->second) out[k] = v;
  return out;
}

void KeyValueConfig::set(const std::string& section, const std::string& key,
                         const std::string& value) {
  sections_[section][key] = value;
}

ExperimentConfig ExperimentConfig::from_map(const std::map<std::string, std::string>& kv) {
  ExperimentConfig c;
  // Ratios are resolved after all keys are read.
  bool has_psi = false, has_gamma = false;
  for (const auto& [k, v] : kv) {
    if (k == "model") c.model = parse_model(trim(v));
    else if (k == "sweep") c.sweep_axis = trim(v);
    else if (k == "grid") c.grid = to_list(k, v);
    else if (k == "alpha") c.fixed.alpha = to_double(k, v);
    else if (k == "psi") c.fixed.psi = to_double(k, v), has_psi = true;
    else if (k == "gamma") c.fixed.gamma = to_double(k, v), has_gamma = true;
    else if (k == "lambda") c.fixed.lambda = to_double(k, v);
    else if (k == "r") c.fixed.r = to_double(k, v);
    else if (k == "s_dual") c.fixed.s_dual = to_double(k, v);
    else if (k == "q_att") c.fixed.q_att = to_double(k, v);
    else if (k == "loss") c.fixed.loss = parse_loss(trim(v));
    else if (k == "link") c.fixed.link = parse_link(trim(v));
    else if (k == "noise_var") c.fixed.noise_var = to_double(k, v);
    else if (k == "eps_grid") c.eps_grid = to_list(k, v);
    else if (k == "repetitions") c.repetitions = int(to_int(k, v));
    else if (k == "d") c.d = to_int(k, v);
    else if (k == "seed") c.seed = std::uint64_t(to_int(k, v));
    else if (k == "damping") c.solver.damping = to_double(k, v);
    else if (k == "tol") c.solver.tol = to_double(k, v);
    else if (k == "max_iter") c.solver.max_iter = int(to_int(k, v));
    else if (k == "eval_mode")
      c.eval_mode = trim(v) == "montecarlo" ? EvalMode::montecarlo
                    : trim(v) == "plugin"   ? EvalMode::plugin
                                            : throw ConfigError("invalid eval_mode: " + v);
    else if (k == "n_test") c.n_test = to_int(k, v);
    else if (k == "overlap_m") c.overlap_m = to_double(k, v);
    else if (k == "overlap_q") c.overlap_q = to_double(k, v);
    else if (k == "q_att_list") c.q_att_list = to_list(k, v);
    else if (k == "d_list") c.d_list = to_list(k, v);
    else if (k == "existence_m") c.existence_m = to_double(k, v);
    else if (k == "n_mc") c.n_mc = int(to_int(k, v));
    else if (k == "objective") c.objective = parse_metric(trim(v));
    else if (k == "tune_lambda") c.tune_lambda = to_bool(k, v);
    else if (k == "tune_r") c.tune_r = to_bool(k, v);
    else if (k == "threads") c.threads = int(to_int(k, v));
    else if (k == "out") c.output_path = trim(v);
    else throw ConfigError("unknown configuration key: " + k);
  }
  if (has_psi && has_gamma) throw ConfigError("set at most one of psi and gamma");
  if (has_psi) c.fixed.gamma = 1.0 / (c.fixed.alpha * c.fixed.psi);
  else c.fixed.psi = 1.0 / (c.fixed.alpha * c.fixed.gamma);
  return c;
}

void ExperimentConfig::validate() const {
  static const std::vector<std::string> axes{"alpha", "psi", "gamma", "lambda", "r", "none"};
  if (std::find(axes.begin(), axes.end(), sweep_axis) == axes.end())
    throw ConfigError("invalid sweep axis: " + sweep_axis);
  if (grid.empty()) throw ConfigError("grid must be nonempty");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("grid must be sorted");
  if (eps_grid.empty() || !std::is_sorted(eps_grid.begin(), eps_grid.end()) || eps_grid.front() < 0)
    throw ConfigError("eps_grid must be nonempty, sorted and nonnegative");
  if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
  if (d < 1) throw ConfigError("d must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (n_mc < 1 || n_test < 1) throw ConfigError("sample counts must be >= 1");
  try {
    for (double g : grid) at(g).validate();
    solver.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::logic_error& e) {
    throw ConfigError(e.what());
  }
}

LatentModelConfig ExperimentConfig::at(double v) const {
  LatentModelConfig c = fixed;
  if (sweep_axis == "alpha") {
    c.alpha = v;
    c.psi = 1.0 / (c.alpha * c.gamma);
  } else if (sweep_axis == "psi") {
    c.psi = v;
    c.gamma = 1.0 / (c.alpha * c.psi);
  } else if (sweep_axis == "gamma") {
    c.gamma = v;
    c.psi = 1.0 / (c.alpha * c.gamma);
  } else if (sweep_axis == "lambda") {
    c.lambda = v;
  } else if (sweep_axis == "r") {
    c.r = v;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Output

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void Table::write_csv(std::ostream& os) const {
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
}

void Table::write_json(std::ostream& os) const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json obj;
    for (std::size_t i = 0; i < columns.size() && i < row.size(); ++i) {
      const auto& s = row[i];
      const char* end = s.data() + s.size();
      long long integer;
      double num;
      if (auto res = std::from_chars(s.data(), end, integer); res.ec == std::errc() && res.ptr == end)
        obj[columns[i]] = integer;
      else if (auto res2 = std::from_chars(s.data(), end, num); res2.ec == std::errc() && res2.ptr == end)
        obj[columns[i]] = num;
      else
        obj[columns[i]] = s;
    }
    arr.push_back(obj);
  }
  os << arr.dump(2) << '\n';
}

std::vector<std::vector<std::vector<std::string>>> run_ordered(
    int count, int threads, const std::function<std::vector<std::vector<std::string>>(int)>& task) {
  std::vector<std::vector<std::vector<std::string>>> out(std::size_t(std::max(count, 0)));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (int i = next++; i < count; i = next++) {
      try {
        out[std::size_t(i)] = task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min(threads, count));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

namespace {

using Row = std::vector<std::string>;

const std::vector<std::string> kEcho{"schema_version", "seed",  "model", "alpha", "psi",
                                     "gamma",          "lambda", "r",    "s_dual", "q_att",
                                     "loss",           "link",   "noise_var"};

Row echo(const ExperimentConfig& cfg, const LatentModelConfig& m) {
  return {std::to_string(kSchemaVersion), std::to_string(cfg.seed), to_string(cfg.model),
          format_number(m.alpha),         format_number(m.psi),     format_number(m.gamma),
          format_number(m.lambda),        format_number(m.r),       format_number(m.s_dual),
          format_number(m.q_att),         to_string(m.loss),        to_string(m.link),
          format_number(m.noise_var)};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

int count_failed(const Table& t, const std::string& status_col) {
  const auto it = std::find(t.columns.begin(), t.columns.end(), status_col);
  if (it == t.columns.end()) return 0;
  const std::size_t k = std::size_t(it - t.columns.begin());
  int n = 0;
  for (const auto& r : t.rows)
    if (r[k] != "ok") ++n;
  return n;
}

Table assemble(std::vector<std::string> columns,
               const std::vector<std::vector<Row>>& chunks) {
  Table t;
  t.columns = std::move(columns);
  for (const auto& c : chunks)
    for (const auto& r : c) t.rows.push_back(r);
  t.failed_rows = count_failed(t, "status");
  return t;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed ^ ((a + 1) * 0x9E3779B97F4A7C15ull) ^ ((b + 1) * 0xC2B2AE3D27D4EB4Full);
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 29;
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// existence

Table cmd_existence(const ExperimentConfig& cfg) {
  cfg.validate();
  struct Job {
    double q_att;
    Eigen::Index d;
  };
  std::vector<Job> jobs;
  for (double q : cfg.q_att_list)
    for (double d : cfg.d_list) jobs.push_back({q, Eigen::Index(d)});
  const std::vector<std::string> cols{"schema_version", "seed", "model", "eps", "q_att", "d",
                                      "p", "overlap_m", "n_mc", "p_theory", "p_montecarlo",
                                      "std_err", "status"};
  auto task = [&](int j) {
    const Job job = jobs[std::size_t(j)];
    const Eigen::Index d = job.d;
    Philox4x32 rng(mix_seed(cfg.seed, std::uint64_t(j), 0), 0);
    std::normal_distribution<double> nd;
    LinearPair<double> pair;
    Eigen::Index p = d;
    if (cfg.model == ModelKind::wellspec) {
      // Teacher along the first axis; model with overlap m and unit norm per
      // coordinate.
      pair.teacher = Eigen::VectorXd::Zero(d);
      pair.teacher(0) = std::sqrt(double(d));
      Eigen::VectorXd g(d);
      for (auto& v : g) v = nd(rng);
      g(0) = 0.0;
      const double mm = cfg.existence_m;
      pair.model = mm * pair.teacher;
      if (g.norm() > 0) pair.model += std::sqrt(std::max(0.0, 1.0 - mm * mm)) * std::sqrt(double(d)) * g.normalized();
    } else {
      p = 2 * d;
      pair.teacher = sample_teacher(d, rng);
      pair.features = feature_map(p, d);
      pair.model.resize(p);
      for (auto& v : pair.model) v = nd(rng);
    }
    std::vector<Row> rows;
    for (double eps : cfg.eps_grid) {
      const AttackGeometry geom = AttackGeometry::raw(job.q_att, eps);
      double theory;
      int hits = 0;
      Philox4x32 mc(mix_seed(cfg.seed, std::uint64_t(j), 1), 0);
      if (cfg.model == ModelKind::wellspec) {
        theory = existence_probability_wellspec(pair, geom);
        std::normal_distribution<double> xd(0.0, 1.0 / std::sqrt(double(d)));
        Eigen::VectorXd x(d);
        for (int s = 0; s < cfg.n_mc; ++s) {
          for (auto& v : x) v = xd(mc);
          hits += consistent_attack_exists(pair, x, geom);
        }
      } else {
        theory = existence_probability_latent(pair, geom, p, d);
        std::normal_distribution<double> zd(0.0, 1.0 / std::sqrt(double(d)));
        std::normal_distribution<double> ud(0.0, 1.0 / std::sqrt(double(p)));
        Eigen::VectorXd z(d), u(p);
        for (int s = 0; s < cfg.n_mc; ++s) {
          for (auto& v : z) v = zd(mc);
          for (auto& v : u) v = ud(mc);
          hits += consistent_attack_exists(pair, z, u, geom);
        }
      }
      const double freq = double(hits) / cfg.n_mc;
      const double se = std::sqrt(std::max(theory * (1 - theory), 0.0) / cfg.n_mc);
      rows.push_back({std::to_string(kSchemaVersion), std::to_string(cfg.seed),
                      to_string(cfg.model), format_number(eps), format_number(job.q_att),
                      std::to_string(d), std::to_string(p), format_number(cfg.existence_m),
                      std::to_string(cfg.n_mc), format_number(theory), format_number(freq),
                      format_number(se), "ok"});
    }
    return rows;
  };
  return assemble(cols, run_ordered(int(jobs.size()), cfg.threads, task));
}

// ---------------------------------------------------------------------------
// asymptotic

namespace {

const std::vector<std::string> kStateCols{"m",     "q",     "V",     "P",   "m_hat",    "q_hat",
                                          "V_hat", "P_hat", "q_l",   "q_f", "residual", "iterations"};
const std::vector<std::string> kMetricCols{"eps_tilde", "clean", "rob", "rob_cns", "bnd_cns"};

Row state_cells(const OverlapState& st) {
  Row r;
  for (const auto& [k, v] : st.record()) r.push_back(format_number(v));
  return r;
}

Row blank(std::size_t n) { return Row(n, "nan"); }

}  // namespace

Table cmd_asymptotic(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto cols = concat(concat(concat(kEcho, {"status"}), kStateCols), kMetricCols);
  auto task = [&](int j) {
    const LatentModelConfig m = cfg.at(cfg.grid[std::size_t(j)]);
    const double qd = dual_exponent(m.q_att);
    std::vector<Row> rows;
    auto emit = [&](const std::string& status, const Row& st, const MetricsReport* rep) {
      for (std::size_t e = 0; e < cfg.eps_grid.size(); ++e) {
        Row r = concat(concat(echo(cfg, m), {status}), st);
        if (rep)
          r = concat(r, {format_number(cfg.eps_grid[e]), format_number(rep->clean),
                         format_number(rep->rob[e]), format_number(rep->rob_cns[e]),
                         format_number(rep->bnd_cns[e])});
        else
          r = concat(r, concat({format_number(cfg.eps_grid[e])}, blank(4)));
        rows.push_back(r);
      }
    };
    if (cfg.model == ModelKind::wellspec) {
      OverlapPair ov{cfg.overlap_m, cfg.overlap_q, {}, {}, {}};
      const MetricsReport rep = metrics_wellspec(ov, qd, cfg.eps_grid);
      Row st = blank(kStateCols.size());
      st[0] = format_number(ov.m);
      st[1] = format_number(ov.q);
      emit("ok", st, &rep);
      return rows;
    }
    try {
      const OverlapState st = solve_fixed_point(m, cfg.solver);
      const MetricsReport rep = metrics_latent(st, m, qd, cfg.eps_grid);
      emit("ok", state_cells(st), &rep);
    } catch (const NonConvergence& e) {
      emit("not_converged", state_cells(e.last_state()), nullptr);
    } catch (const NumericalError& e) {
      emit("error", blank(kStateCols.size()), nullptr);
    }
    return rows;
  };
  return assemble(cols, run_ordered(int(cfg.grid.size()), cfg.threads, task));
}

// ---------------------------------------------------------------------------
// simulate

namespace {

struct SimRecord {
  bool ok = false;
  OverlapPair ov;
  MetricsReport rep;
  int iterations = 0;
  bool converged = false;
};

struct Sizes {
  Eigen::Index d, p, n;
};

Sizes sizes_for(const ExperimentConfig& cfg, const LatentModelConfig& m) {
  const Eigen::Index d = cfg.d;
  const Eigen::Index n = std::max<Eigen::Index>(1, Eigen::Index(std::llround(m.alpha * double(d))));
  const Eigen::Index p = cfg.model == ModelKind::latent
                             ? std::max<Eigen::Index>(1, Eigen::Index(std::llround(double(d) / m.gamma)))
                             : d;
  return {d, p, n};
}

SimRecord simulate_once(const ExperimentConfig& cfg, const LatentModelConfig& m,
                        std::uint64_t seed) {
  const Sizes sz = sizes_for(cfg, m);
  const Dataset ds = cfg.model == ModelKind::latent
                         ? generate_latent(sz.d, sz.p, sz.n, m.link, seed, m.noise_var)
                         : generate_wellspec(sz.d, sz.n, m.link, seed, m.noise_var);
  TrainConfig tc;
  tc.loss = m.loss;
  tc.lambda = m.lambda;
  tc.r = m.r;
  tc.s_dual = m.s_dual;
  SimRecord rec;
  const TrainedPredictor pred = train_robust_erm(ds, tc);
  EvalSpec es;
  es.mode = cfg.eval_mode;
  es.n_test = cfg.n_test;
  es.seed = seed;
  rec.rep = empirical_metrics(pred.weights, ds, m.q_att, cfg.eps_grid, es);
  rec.ov = pred.overlaps;
  rec.iterations = pred.diag.iterations;
  rec.converged = pred.diag.converged;
  rec.ok = true;
  return rec;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= double(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(s / double(v.size() - 1));
  }
  return r;
}

const std::vector<std::string> kSimCols{"d", "p", "n", "rep", "rep_seed", "status",
                                        "m", "q", "q_l", "q_f", "P", "train_iterations",
                                        "train_converged"};

std::vector<SimRecord> simulate_point(const ExperimentConfig& cfg, const LatentModelConfig& m,
                                      int point) {
  std::vector<SimRecord> recs;
  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t s = mix_seed(cfg.seed, std::uint64_t(point), std::uint64_t(rep));
    try {
      recs.push_back(simulate_once(cfg, m, s));
    } catch (const std::exception&) {
      recs.push_back(SimRecord{});
    }
  }
  return recs;
}

}  // namespace

Table cmd_simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto cols = concat(concat(kEcho, kSimCols), kMetricCols);
  auto task = [&](int j) {
    const LatentModelConfig m = cfg.at(cfg.grid[std::size_t(j)]);
    const Sizes sz = sizes_for(cfg, m);
    const auto recs = simulate_point(cfg, m, j);
    std::vector<Row> rows;
    auto opt = [](const std::optional<double>& x) { return format_number(x.value_or(NAN)); };
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      const SimRecord& rc = recs[std::size_t(rep)];
      const std::uint64_t s = mix_seed(cfg.seed, std::uint64_t(j), std::uint64_t(rep));
      for (std::size_t e = 0; e < cfg.eps_grid.size(); ++e) {
        Row r = concat(echo(cfg, m), {std::to_string(sz.d), std::to_string(sz.p),
                                      std::to_string(sz.n), std::to_string(rep),
                                      std::to_string(s), rc.ok ? "ok" : "train_failed"});
        if (rc.ok) {
          r = concat(r, {format_number(rc.ov.m), format_number(rc.ov.q), opt(rc.ov.q_l),
                         opt(rc.ov.q_f), opt(rc.ov.P), std::to_string(rc.iterations),
                         rc.converged ? "1" : "0", format_number(cfg.eps_grid[e]),
                         format_number(rc.rep.clean), format_number(rc.rep.rob[e]),
                         format_number(rc.rep.rob_cns[e]), format_number(rc.rep.bnd_cns[e])});
        } else {
          r = concat(r, concat(blank(7), concat({format_number(cfg.eps_grid[e])}, blank(4))));
        }
        rows.push_back(r);
      }
    }
    // Aggregate rows over successful repetitions.
    for (const char* kind : {"mean", "std"}) {
      const bool is_mean = std::string(kind) == "mean";
      auto agg = [&](auto getter) {
        std::vector<double> v;
        for (const auto& rc : recs)
          if (rc.ok) v.push_back(getter(rc));
        const MeanStd ms = mean_std(v);
        return format_number(v.empty() ? NAN : (is_mean ? ms.mean : ms.std));
      };
      for (std::size_t e = 0; e < cfg.eps_grid.size(); ++e) {
        Row r = concat(echo(cfg, m), {std::to_string(sz.d), std::to_string(sz.p),
                                      std::to_string(sz.n), kind, "", "ok"});
        r = concat(r, {agg([](const SimRecord& x) { return x.ov.m; }),
                       agg([](const SimRecord& x) { return x.ov.q; }),
                       agg([](const SimRecord& x) { return x.ov.q_l.value_or(NAN); }),
                       agg([](const SimRecord& x) { return x.ov.q_f.value_or(NAN); }),
                       agg([](const SimRecord& x) { return x.ov.P.value_or(NAN); }), "", "",
                       format_number(cfg.eps_grid[e]),
                       agg([](const SimRecord& x) { return x.rep.clean; }),
                       agg([&](const SimRecord& x) { return x.rep.rob[e]; }),
                       agg([&](const SimRecord& x) { return x.rep.rob_cns[e]; }),
                       agg([&](const SimRecord& x) { return x.rep.bnd_cns[e]; })});
        rows.push_back(r);
      }
    }
    return rows;
  };
  return assemble(cols, run_ordered(int(cfg.grid.size()), cfg.threads, task));
}

// ---------------------------------------------------------------------------
// tune

Table cmd_tune(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.model != ModelKind::latent) throw ConfigError("tune requires model = latent");
  const auto cols = concat(
      kEcho, {"objective", "eps_tilde", "status", "lambda_star", "r_star", "value",
              "untuned_value", "trace_length", "optimizer_converged"});
  const double eps = cfg.eps_grid.back();
  auto task = [&](int j) {
    const LatentModelConfig m = cfg.at(cfg.grid[std::size_t(j)]);
    TuneRequest req;
    req.objective = cfg.objective;
    req.eps_tilde = eps;
    req.tune_lambda = cfg.tune_lambda;
    req.tune_r = cfg.tune_r;
    req.solver = cfg.solver;
    Row base = concat(echo(cfg, m), {to_string(cfg.objective), format_number(eps)});
    double untuned = NAN;
    try {
      const OverlapState st = solve_fixed_point(m, cfg.solver);
      untuned = asymptotic_metric(st, m, cfg.objective, eps);
    } catch (const NumericalError&) {
    }
    try {
      const TuneResult res = tune_hyperparameters(m, req);
      return std::vector<Row>{concat(
          base, {"ok", format_number(res.lambda), format_number(res.r), format_number(res.value),
                 format_number(untuned), std::to_string(res.trace.size()),
                 res.converged ? "1" : "0"})};
    } catch (const NumericalError&) {
      return std::vector<Row>{
          concat(base, {"error", "nan", "nan", "nan", format_number(untuned), "0", "0"})};
    }
  };
  return assemble(cols, run_ordered(int(cfg.grid.size()), cfg.threads, task));
}

// ---------------------------------------------------------------------------
// compare

Table cmd_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto cols = concat(concat(kEcho, {"d", "repetitions", "eps_tilde", "quantity", "status",
                                          "theory", "sim_mean", "sim_std", "z_score"}),
                           {});
  auto task = [&](int j) {
    const LatentModelConfig m = cfg.at(cfg.grid[std::size_t(j)]);
    const double qd = dual_exponent(m.q_att);
    const auto recs = simulate_point(cfg, m, j);
    std::vector<SimRecord> good;
    for (const auto& r : recs)
      if (r.ok) good.push_back(r);
    std::vector<Row> rows;
    auto stat = [&](auto getter) {
      std::vector<double> v;
      for (const auto& rc : good) v.push_back(getter(rc));
      return mean_std(v);
    };
    std::string status = good.empty() ? "train_failed" : "ok";
    OverlapPair theory_ov;
    std::optional<MetricsReport> th;
    try {
      if (cfg.model == ModelKind::latent) {
        const OverlapState st = solve_fixed_point(m, cfg.solver);
        theory_ov = OverlapPair::from_state(st);
        th = metrics_latent(st, m, qd, cfg.eps_grid);
      } else if (!good.empty()) {
        // Overlaps are inputs for this model: use the measured means.
        theory_ov = {stat([](const SimRecord& x) { return x.ov.m; }).mean,
                     stat([](const SimRecord& x) { return x.ov.q; }).mean, {}, {}, {}};
        th = metrics_wellspec(theory_ov, qd, cfg.eps_grid);
      }
    } catch (const NonConvergence&) {
      status = "not_converged";
    } catch (const NumericalError&) {
      status = "error";
    }
    auto push = [&](double eps, const std::string& name, double theory, MeanStd ms) {
      const double se = ms.std / std::sqrt(double(std::max<std::size_t>(good.size(), 1)));
      const double z = se > 0 ? std::abs(theory - ms.mean) / se : NAN;
      rows.push_back(concat(echo(cfg, m),
                            {std::to_string(cfg.d), std::to_string(good.size()),
                             format_number(eps), name, status, format_number(theory),
                             format_number(ms.mean), format_number(ms.std), format_number(z)}));
    };
    const bool have = th.has_value() && !good.empty();
    push(0.0, "m", have ? theory_ov.m : NAN, stat([](const SimRecord& x) { return x.ov.m; }));
    push(0.0, "q", have ? theory_ov.q : NAN, stat([](const SimRecord& x) { return x.ov.q; }));
    push(0.0, "clean", have ? th->clean : NAN, stat([](const SimRecord& x) { return x.rep.clean; }));
    for (std::size_t e = 0; e < cfg.eps_grid.size(); ++e) {
      const double eps = cfg.eps_grid[e];
      push(eps, "rob", have ? th->rob[e] : NAN,
           stat([&](const SimRecord& x) { return x.rep.rob[e]; }));
      push(eps, "rob_cns", have ? th->rob_cns[e] : NAN,
           stat([&](const SimRecord& x) { return x.rep.rob_cns[e]; }));
      push(eps, "bnd_cns", have ? th->bnd_cns[e] : NAN,
           stat([&](const SimRecord& x) { return x.rep.bnd_cns[e]; }));
    }
    return rows;
  };
  return assemble(cols, run_ordered(int(cfg.grid.size()), cfg.threads, task));
}

}  // namespace advcons
