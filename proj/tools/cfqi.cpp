#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "cfqi/censor.hpp"
#include "cfqi/errors.hpp"
#include "cfqi/experiment.hpp"

namespace fs = std::filesystem;
using namespace cfqi;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  std::vector<int> episodes;
  std::optional<std::string> behavior;
  std::optional<std::string> algo;
  std::optional<std::string> out_dir;
  std::optional<int> window_k;
  std::optional<double> beta;
  bool quick = false;
};

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
}

ExperimentConfig resolve(const Options& o) {
  json j = load_config_json(o.config);
  if (!j.is_object()) throw ConfigError("config", "expected an object");
  if (o.seed) j["data"]["base_seed"] = *o.seed;
  if (o.replicates) j["data"]["replicates"] = *o.replicates;
  if (!o.episodes.empty()) j["data"]["episodes"] = o.episodes;
  if (o.behavior) j["data"]["behavior"] = *o.behavior;
  if (o.algo) j["algorithms"] = json::array({*o.algo});
  if (o.out_dir) j["output"]["dir"] = *o.out_dir;
  if (o.window_k) j["algo"]["window_k"] = *o.window_k;
  if (o.beta) j["algo"]["beta"] = *o.beta;
  if (o.quick) {
    j["eval"]["episodes"] = 50;
    j["algo"]["cv_folds"] = 3;
    j["algo"]["lambda_grid"] = json::array({1.0});
  }
  return ExperimentConfig::from_json(j);
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--seeds,--replicates", o.replicates, "number of seeds (replicates)");
  cmd->add_option("--episodes", o.episodes, "episode counts");
  cmd->add_option("--behavior", o.behavior, "behavior policy")
      ->check(CLI::IsMember({"uniform", "optimal", "epsilon_safe"}));
  cmd->add_option("--algo", o.algo, "algorithm")->check(CLI::IsMember({"cfqi", "pcfqi", "fusion"}));
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--window-k", o.window_k, "window length for the censoring-run estimate (0 = default)");
  cmd->add_option("--beta", o.beta, "uncertainty multiplier");
  cmd->add_flag("--quick", o.quick, "smaller evaluation and CV grid");
}

void warn_amax(const EnvConfig& env) {
  if (!amax_clears_cap(env))
    std::cerr << "warning: (max price, max order) does not guarantee an uncensored next period for this config\n";
}

fs::path out_path(const ExperimentConfig& cfg, const std::string& explicit_path, const std::string& name) {
  if (!explicit_path.empty()) return explicit_path;
  fs::create_directories(cfg.out_dir);
  return cfg.out_dir / name;
}

int cmd_generate(const Options& o, const std::string& out) {
  const auto cfg = resolve(o);
  warn_amax(cfg.env);
  std::shared_ptr<const Policy> optimal;
  if (cfg.data.behavior == BehaviorKind::plugin_optimal) {
    try {
      optimal = solve_censored_dp(cfg.env, cfg.oracle).policy;
    } catch (const std::exception& e) {
      throw StageError("oracle", e.what());
    }
  }
  const int n = cfg.data.episodes.front();
  OfflineDataset ds;
  try {
    ds = generate_dataset(cfg.env, make_behavior(cfg, optimal), n, cfg.data.horizon, cfg.replicate_seed(0));
  } catch (const std::exception& e) {
    throw StageError("generate", e.what());
  }
  const auto path = out_path(cfg, out, "dataset.jsonl");
  save_dataset(ds, path);
  std::size_t censored = 0;
  for (const auto& t : ds.trajectories)
    for (const auto& s : t.steps) censored += s.delta ? 0 : 1;
  std::cout << "wrote " << path.string() << ": " << ds.n_traj() << " trajectories, " << ds.size()
            << " transitions, " << censored << " censored\n";
  return 0;
}

int cmd_impute(const Options& o, const std::string& in, const std::string& out, const std::string& report) {
  const auto cfg = resolve(o);
  OfflineDataset ds;
  try {
    ds = load_dataset(in);
  } catch (const std::exception& e) {
    throw StageError("impute", e.what());
  }
  const EnvConfig env = EnvConfig::from_json(ds.meta.env, "env");
  AugmentedDataset aug;
  try {
    const auto model = SurvivalModel::fit(ds, cfg.survival, env.actions, env.demand.d_max);
    aug = impute(ds, model, env.costs);
  } catch (const std::exception& e) {
    throw StageError("impute", e.what());
  }
  const auto path = out_path(cfg, out, "augmented.jsonl");
  save_dataset(aug.data, aug.r_star, path);
  const json stats{{"censored", aug.stats.censored},
                   {"global_fallbacks", aug.stats.global_fallbacks},
                   {"midpoint_fallbacks", aug.stats.midpoint_fallbacks},
                   {"survival", to_string(cfg.survival.kind)}};
  const fs::path rpath = report.empty() ? fs::path(path.string() + ".report.json") : fs::path(report);
  std::ofstream(rpath) << stats.dump(2) << "\n";
  std::cout << "wrote " << path.string() << " and " << rpath.string() << ": " << stats.dump() << "\n";
  return 0;
}

int cmd_train(const Options& o, const std::string& in, const std::string& out) {
  const auto cfg = resolve(o);
  AugmentedDataset aug;
  try {
    aug.data = load_dataset(in, &aug.r_star);
  } catch (const std::exception& e) {
    throw StageError("train", e.what());
  }
  if (aug.r_star.empty()) throw StageError("train", "input has no r_star field; run impute first");
  const EnvConfig env = EnvConfig::from_json(aug.data.meta.env, "env");
  warn_amax(env);
  FqiConfig fc = cfg.algo;
  fc.mode = cfg.algorithms.front();
  TrainResult res = [&] {
    try {
      return run_fqi(aug, env, fc, derive_seed(cfg.data.base_seed, 1));
    } catch (const CoverageError& e) {
      throw StageError("train", e.what());
    } catch (const std::exception& e) {
      throw StageError("train", e.what());
    }
  }();
  std::cout << "window_k=" << res.report.window_k << " n_hat=" << res.report.n_hat << " buckets=";
  for (std::size_t i = 0; i < res.report.bucket_sizes.size(); ++i)
    std::cout << (i ? "," : "") << res.report.bucket_sizes[i];
  std::cout << " discarded=" << res.report.discarded << "\n";
  const auto path = out_path(cfg, out, "policy_" + to_string(fc.mode) + ".json");
  save_policy(res.artifact, path);
  std::cout << "wrote " << path.string() << " (" << res.artifact.summary_hash() << ")\n";
  return 0;
}

json report_json(const EvalReport& r) {
  return {{"policy", r.algo},          {"episodes", r.n_episodes},  {"horizon", r.horizon},
          {"gamma", r.gamma},          {"seed", r.seed},            {"mean_return", r.mean_return},
          {"sd", r.sd},                {"ci_half", r.ci_half},      {"truncation_bound", r.truncation_bound},
          {"amax_events", r.amax_events}, {"boundary_events", r.boundary_events}};
}

int cmd_evaluate(const Options& o, const std::string& policy_path, const std::string& out) {
  const auto cfg = resolve(o);
  std::shared_ptr<const Policy> policy;
  EnvConfig env;
  try {
    std::ifstream in(policy_path);
    if (!in) throw std::runtime_error("cannot open " + policy_path);
    const json j = json::parse(in);
    if (j.value("format", "") == "cfqi-policy") {
      auto p = std::make_shared<PolicyArtifact>(policy_from_json(j));
      env = p->env();
      policy = p;
    } else {
      auto p = std::make_shared<TabularPolicy>(TabularPolicy::from_json(j));
      env = p->env();
      policy = p;
    }
  } catch (const std::exception& e) {
    throw StageError("evaluate", e.what());
  }
  EvalReport rep;
  try {
    rep = evaluate_policy(*policy, env, cfg.eval.episodes, cfg.eval.horizon, cfg.eval.gamma, cfg.eval.seed);
  } catch (const std::exception& e) {
    throw StageError("evaluate", e.what());
  }
  rep.algo = policy->name();
  const std::string text = report_json(rep).dump(2);
  if (!out.empty()) std::ofstream(out) << text << "\n";
  std::cout << text << "\n";
  return 0;
}

int cmd_experiment(const Options& o) {
  const auto cfg = resolve(o);
  if (!amax_clears_cap(cfg.env)) warn_amax(cfg.env);
  const auto summary = run_experiment(cfg, std::cerr);
  std::cout << "wrote " << summary.results_csv.string() << ": " << summary.rows.size() << " rows ("
            << summary.cells_run << " cells run, " << summary.cells_cached << " cached)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline pricing and inventory learning under censored demand"};
  app.set_version_flag("--version", std::string(kLibraryVersion));
  app.require_subcommand(1);
  Options o;
  std::string in, out, report, policy;

  auto* gen = app.add_subcommand("generate", "simulate an offline dataset");
  add_common(gen, o);
  gen->add_option("--out", out, "dataset file (default <out-dir>/dataset.jsonl)");

  auto* imp = app.add_subcommand("impute", "impute surrogate rewards for censored periods");
  add_common(imp, o);
  imp->add_option("--in", in, "dataset file")->required()->check(CLI::ExistingFile);
  imp->add_option("--out", out, "augmented dataset file");
  imp->add_option("--report", report, "fallback statistics file");

  auto* tr = app.add_subcommand("train", "fit a policy on an augmented dataset");
  add_common(tr, o);
  tr->add_option("--in", in, "augmented dataset file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "policy file");

  auto* ev = app.add_subcommand("evaluate", "Monte-Carlo evaluation of a policy file");
  add_common(ev, o);
  ev->add_option("--policy", policy, "policy file")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out, "report file");

  auto* ex = app.add_subcommand("experiment", "run the full episode ladder");
  add_common(ex, o);

  auto* show = app.add_subcommand("config", "print the resolved configuration");
  add_common(show, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(o, out);
    if (*imp) return cmd_impute(o, in, out, report);
    if (*tr) return cmd_train(o, in, out);
    if (*ev) return cmd_evaluate(o, policy, out);
    if (*show) {
      std::cout << resolve(o).to_json().dump(2) << "\n";
      return 0;
    }
    return cmd_experiment(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
