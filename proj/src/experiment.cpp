#include "cfqi/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "cfqi/errors.hpp"
#include "cfqi/json_util.hpp"

namespace cfqi {

namespace ju = jsonutil;
namespace fs = std::filesystem;

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return json::parse(buf.str());
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <class F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  env.validate("env");
  if (data.episodes.empty()) throw ConfigError("data.episodes", "must not be empty");
  for (int n : data.episodes)
    if (n < 1) throw ConfigError("data.episodes", "episode counts must be >= 1");
  if (data.horizon < 2) throw ConfigError("data.horizon", "must be >= 2");
  if (data.replicates < 1) throw ConfigError("data.replicates", "must be >= 1");
  if (!(data.epsilon >= 0.0 && data.epsilon <= 1.0)) throw ConfigError("data.epsilon", "must lie in [0, 1]");
  if (!(survival.bandwidth_scale > 0.0)) throw ConfigError("survival.bandwidth_scale", "must be > 0");
  if (eval.episodes < 2) throw ConfigError("eval.episodes", "must be >= 2");
  if (eval.horizon < 1) throw ConfigError("eval.horizon", "must be >= 1");
  if (!(eval.gamma >= 0.0 && eval.gamma < 1.0)) throw ConfigError("eval.gamma", "must lie in [0, 1)");
  algo.validate("algo");
  if (algorithms.empty()) throw ConfigError("algorithms", "must not be empty");
  if (env.truncates() && oracle.n_cap < env.max_censor_run)
    throw ConfigError("oracle.n_cap", "must be >= env.max_censor_run");
  if (oracle.n_cap < 0) throw ConfigError("oracle.n_cap", "must be >= 0");
  if (oracle.max_sweeps < 1) throw ConfigError("oracle.max_sweeps", "must be >= 1");
  if (!(oracle.tol_factor > 0.0)) throw ConfigError("oracle.tol_factor", "must be > 0");
}

json ExperimentConfig::to_json() const {
  json algos = json::array();
  for (auto m : algorithms) algos.push_back(to_string(m));
  json a = algo.to_json();
  a.erase("gamma");
  return {{"env", env.to_json()},
          {"data",
           {{"behavior", to_string(data.behavior)},
            {"epsilon", data.epsilon},
            {"episodes", data.episodes},
            {"horizon", data.horizon},
            {"replicates", data.replicates},
            {"base_seed", data.base_seed}}},
          {"survival",
           {{"kind", to_string(survival.kind)},
            {"history_depth", survival.history_depth},
            {"bandwidth_scale", survival.bandwidth_scale}}},
          {"algo", a},
          {"algorithms", algos},
          {"eval", {{"episodes", eval.episodes}, {"horizon", eval.horizon}, {"gamma", eval.gamma}, {"seed", eval.seed}}},
          {"oracle", {{"n_cap", oracle.n_cap}, {"max_sweeps", oracle.max_sweeps}, {"tol_factor", oracle.tol_factor}}},
          {"output", {{"dir", out_dir.string()}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ju::allow_only(j, "", {"env", "data", "survival", "algo", "algorithms", "eval", "oracle", "output"});
  ExperimentConfig c;
  if (j.contains("env")) c.env = EnvConfig::from_json(j.at("env"), "env");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    ju::allow_only(d, "data", {"behavior", "epsilon", "episodes", "horizon", "replicates", "base_seed"});
    if (d.contains("behavior")) {
      std::string b;
      ju::read(d, "behavior", "data", b);
      try {
        c.data.behavior = behavior_kind_from_string(b);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("data.behavior", e.what());
      }
    }
    ju::read(d, "epsilon", "data", c.data.epsilon);
    ju::read(d, "episodes", "data", c.data.episodes);
    ju::read(d, "horizon", "data", c.data.horizon);
    ju::read(d, "replicates", "data", c.data.replicates);
    ju::read(d, "base_seed", "data", c.data.base_seed);
  }
  if (j.contains("survival")) {
    const auto& s = j.at("survival");
    ju::allow_only(s, "survival", {"kind", "history_depth", "bandwidth_scale"});
    if (s.contains("kind")) {
      std::string k;
      ju::read(s, "kind", "survival", k);
      try {
        c.survival.kind = survival_kind_from_string(k);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("survival.kind", e.what());
      }
    }
    ju::read(s, "history_depth", "survival", c.survival.history_depth);
    ju::read(s, "bandwidth_scale", "survival", c.survival.bandwidth_scale);
  }
  if (j.contains("algo")) {
    if (j.at("algo").contains("gamma")) throw ConfigError("algo.gamma", "the discount factor is set by eval.gamma");
    c.algo = FqiConfig::from_json(j.at("algo"), "algo");
  }
  if (j.contains("algorithms")) {
    std::vector<std::string> names;
    ju::read(j, "algorithms", "", names);
    c.algorithms.clear();
    for (const auto& n : names) {
      try {
        c.algorithms.push_back(fqi_mode_from_string(n));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("algorithms", e.what());
      }
    }
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    ju::allow_only(e, "eval", {"episodes", "horizon", "gamma", "seed"});
    ju::read(e, "episodes", "eval", c.eval.episodes);
    ju::read(e, "horizon", "eval", c.eval.horizon);
    ju::read(e, "gamma", "eval", c.eval.gamma);
    ju::read(e, "seed", "eval", c.eval.seed);
  }
  if (j.contains("oracle")) {
    const auto& o = j.at("oracle");
    ju::allow_only(o, "oracle", {"n_cap", "max_sweeps", "tol_factor"});
    ju::read(o, "n_cap", "oracle", c.oracle.n_cap);
    ju::read(o, "max_sweeps", "oracle", c.oracle.max_sweeps);
    ju::read(o, "tol_factor", "oracle", c.oracle.tol_factor);
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    ju::allow_only(o, "output", {"dir"});
    std::string dir = c.out_dir.string();
    ju::read(o, "dir", "output", dir);
    c.out_dir = dir;
  }
  c.algo.gamma = c.eval.gamma;
  c.oracle.gamma = c.eval.gamma;
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output");
  j.erase("algorithms");
  j["data"].erase("episodes");
  j["data"].erase("replicates");
  j["version"] = kLibraryVersion;
  return hex16(fnv1a(j.dump()));
}

std::uint64_t ExperimentConfig::replicate_seed(int replicate) const {
  return derive_seed(data.base_seed, static_cast<std::uint64_t>(replicate));
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const json::parse_error& e) {
    throw ParseError(1, "config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

BehaviorPolicy make_behavior(const ExperimentConfig& cfg, const std::shared_ptr<const Policy>& optimal) {
  switch (cfg.data.behavior) {
    case BehaviorKind::uniform: return BehaviorPolicy::uniform(cfg.env.actions);
    case BehaviorKind::epsilon_safe: return BehaviorPolicy::epsilon_safe(cfg.env.actions, cfg.data.epsilon);
    case BehaviorKind::plugin_optimal: {
      const auto* tab = dynamic_cast<const TabularPolicy*>(optimal.get());
      if (!tab) throw std::invalid_argument("optimal behavior needs the censored DP policy");
      return plugin_optimal_policy(optimal, tab->env().fingerprint(), tab->env().actions, cfg.env);
    }
  }
  throw std::invalid_argument("unknown behavior kind");
}

bool amax_clears_cap(const EnvConfig& env) {
  const auto& d = env.demand;
  const Features x_hi{d.theta_x[0] >= 0.0 ? env.features.ir_bound() : -env.features.ir_bound(),
                      d.theta_x[1] >= 0.0 ? 1.0 : 0.0};
  const double level = d.mean(x_hi, env.actions.max_price(), d.rho >= 0.0 ? d.d_max : 0.0);
  return std::clamp(level, 0.0, d.d_max) <= env.y_cap;
}

ReferencePolicies solve_references(const ExperimentConfig& cfg) {
  ReferencePolicies ref{stage("oracle", [&] { return solve_censored_dp(cfg.env, cfg.oracle); }),
                        stage("oracle", [&] { return solve_oracle_dp(cfg.env, cfg.oracle); }),
                        {},
                        {}};
  ref.censored_report = stage("evaluate", [&] {
    return evaluate_policy(*ref.censored.policy, cfg.env, cfg.eval.episodes, cfg.eval.horizon, cfg.eval.gamma,
                           cfg.eval.seed);
  });
  ref.oracle_report = stage("evaluate", [&] {
    return evaluate_policy(*ref.oracle.policy, cfg.env, cfg.eval.episodes, cfg.eval.horizon, cfg.eval.gamma,
                           cfg.eval.seed);
  });
  return ref;
}

unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("CFQI_THREADS")) {
    try {
      const long v = std::stol(cap);
      if (v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
    } catch (const std::exception&) {
    }
  }
  return n;
}

namespace {

json report_to_cell(const EvalReport& r, int replicate, int n_hat) {
  return {{"algo", r.algo},           {"mode", r.mode},
          {"n_episodes", r.n_train_episodes}, {"replicate", replicate},
          {"seed", r.seed},           {"mean_return", r.mean_return},
          {"sd", r.sd},               {"ci_half", r.ci_half},
          {"amax_events", r.amax_events}, {"boundary_events", r.boundary_events},
          {"n_hat", n_hat},           {"returns", r.returns}};
}

EvalReport cell_to_report(const json& j, const ExperimentConfig& cfg) {
  EvalReport r;
  r.algo = j.at("algo").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.n_train_episodes = j.at("n_episodes").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.mean_return = j.at("mean_return").get<double>();
  r.sd = j.at("sd").get<double>();
  r.ci_half = j.at("ci_half").get<double>();
  r.amax_events = j.at("amax_events").get<std::size_t>();
  r.boundary_events = j.at("boundary_events").get<std::size_t>();
  r.returns = j.at("returns").get<std::vector<double>>();
  r.n_episodes = static_cast<int>(r.returns.size());
  r.horizon = cfg.eval.horizon;
  r.gamma = cfg.eval.gamma;
  r.env_fingerprint = cfg.env.fingerprint();
  return r;
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const std::string hash = cfg.hash();
  const fs::path cell_dir = cfg.out_dir / "cells" / hash;
  fs::create_directories(cell_dir);
  if (!amax_clears_cap(cfg.env))
    log << "warning: a_max does not keep the noiseless demand within the inventory cap for this config\n";

  const ReferencePolicies ref = solve_references(cfg);
  const BehaviorPolicy behavior = make_behavior(cfg, ref.censored.policy);
  const std::string scenario = to_string(cfg.data.behavior);

  struct Task {
    int n;
    int replicate;
  };
  std::vector<Task> tasks;
  for (int n : cfg.data.episodes)
    for (int r = 0; r < cfg.data.replicates; ++r) tasks.push_back({n, r});

  auto cell_path = [&](const Task& t, FqiMode m) {
    return cell_dir / (scenario + "_" + to_string(m) + "_n" + std::to_string(t.n) + "_r" + std::to_string(t.replicate) +
                       ".json");
  };

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::size_t ran = 0;
  std::size_t cached = 0;
  std::exception_ptr failure;

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      const Task t = tasks[i];
      try {
        std::vector<FqiMode> todo;
        for (auto m : cfg.algorithms)
          if (!fs::exists(cell_path(t, m))) todo.push_back(m);
        if (todo.empty()) {
          std::lock_guard lock(mu);
          cached += cfg.algorithms.size();
          continue;
        }
        const std::uint64_t seed = cfg.replicate_seed(t.replicate);
        const auto ds = stage("generate", [&] {
          return generate_dataset(cfg.env, behavior, t.n, cfg.data.horizon, seed);
        });
        const auto aug = stage("impute", [&] {
          const auto model = SurvivalModel::fit(ds, cfg.survival, cfg.env.actions, cfg.env.demand.d_max);
          return impute(ds, model, cfg.env.costs);
        });
        for (auto m : todo) {
          FqiConfig fc = cfg.algo;
          fc.mode = m;
          const auto trained = stage("train", [&] { return run_fqi(aug, cfg.env, fc, derive_seed(seed, 1)); });
          auto rep = stage("evaluate", [&] {
            return evaluate_policy(trained.artifact, cfg.env, cfg.eval.episodes, cfg.eval.horizon, cfg.eval.gamma,
                                   cfg.eval.seed);
          });
          rep.algo = to_string(m);
          rep.mode = scenario;
          rep.n_train_episodes = t.n;
          write_atomically(cell_path(t, m), report_to_cell(rep, t.replicate, trained.report.n_hat).dump() + "\n");
          std::lock_guard lock(mu);
          ++ran;
          log << scenario << " " << to_string(m) << " episodes=" << t.n << " replicate=" << t.replicate
              << " n_hat=" << trained.report.n_hat << " return=" << rep.mean_return << "\n";
        }
        std::lock_guard lock(mu);
        cached += cfg.algorithms.size() - todo.size();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const unsigned n_threads = std::min<unsigned>(worker_threads(), static_cast<unsigned>(std::max<std::size_t>(tasks.size(), 1)));
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < n_threads; ++k) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<EvalReport> reports;
  for (const auto& t : tasks)
    for (auto m : cfg.algorithms) reports.push_back(cell_to_report(read_json_file(cell_path(t, m)), cfg));
  // The results key on the replicate index rather than the derived stream seed.
  std::vector<RegretRow> rows = regret_table(reports, ref.oracle_report);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].seed = static_cast<std::uint64_t>(tasks[i / cfg.algorithms.size()].replicate);

  fs::create_directories(cfg.out_dir);
  ExperimentSummary summary;
  summary.cells_run = ran;
  summary.cells_cached = cached;
  summary.results_csv = cfg.out_dir / "results.csv";
  {
    std::ostringstream out;
    write_regret_csv(rows, out);
    write_atomically(summary.results_csv, out.str());
  }
  {
    auto ref_rows = regret_table({ref.censored_report, ref.oracle_report}, ref.oracle_report);
    for (auto& r : ref_rows) r.mode = "reference";
    std::ostringstream out;
    write_regret_csv(ref_rows, out);
    write_atomically(cfg.out_dir / "reference.csv", out.str());
  }
  {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    json manifest{{"config_hash", hash},
                  {"library_version", kLibraryVersion},
                  {"created", stamp},
                  {"oracle_method", "value iteration on the discretized process (replaces a policy-gradient oracle)"},
                  {"config", cfg.to_json()},
                  {"files", {"results.csv", "reference.csv", "cells/" + hash}},
                  {"censored_dp_sweeps", ref.censored.table.sweeps()},
                  {"oracle_dp_sweeps", ref.oracle.table.sweeps()}};
    write_atomically(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");
  }
  summary.rows = std::move(rows);
  return summary;
}

}  // namespace cfqi
