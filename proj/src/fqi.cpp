#include "cfqi/fqi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "cfqi/errors.hpp"
#include "cfqi/json_util.hpp"

namespace cfqi {

namespace ju = jsonutil;

namespace {

constexpr int kArtifactVersion = 1;

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Feature rows for every grid action at one block (or only `only` when given).
void encode_actions(const FeatureMap& fm, const HistoryBlock& block, const ActionGrid& grid,
                    std::optional<std::size_t> only, Eigen::MatrixXd& out, Eigen::Index row0) {
  const auto d = fm.dim(block.depth());
  Eigen::VectorXd buf(static_cast<Eigen::Index>(d));
  auto put = [&](std::size_t a, Eigen::Index r) {
    fm.encode(block, grid.at(a), buf.data());
    out.row(r) = buf.transpose();
  };
  if (only) {
    put(*only, row0);
  } else {
    for (std::size_t a = 0; a < grid.size(); ++a) put(a, row0 + static_cast<Eigen::Index>(a));
  }
}

}  // namespace

std::string to_string(FqiMode mode) {
  switch (mode) {
    case FqiMode::cfqi: return "cfqi";
    case FqiMode::pcfqi: return "pcfqi";
    case FqiMode::fusion: return "fusion";
  }
  return "?";
}

FqiMode fqi_mode_from_string(const std::string& s) {
  if (s == "cfqi") return FqiMode::cfqi;
  if (s == "pcfqi") return FqiMode::pcfqi;
  if (s == "fusion") return FqiMode::fusion;
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

void FqiConfig::validate(const std::string& prefix) const {
  if (iterations < 1) throw ConfigError(ju::join(prefix, "iterations"), "must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError(ju::join(prefix, "gamma"), "must lie in [0, 1)");
  if (!(beta >= 0.0)) throw ConfigError(ju::join(prefix, "beta"), "must be >= 0");
  if (!(lambda > 0.0)) throw ConfigError(ju::join(prefix, "lambda"), "must be > 0");
  if (lambda_grid.empty()) throw ConfigError(ju::join(prefix, "lambda_grid"), "must not be empty");
  for (double l : lambda_grid)
    if (!(l > 0.0)) throw ConfigError(ju::join(prefix, "lambda_grid"), "entries must be > 0");
  if (kernels.empty()) throw ConfigError(ju::join(prefix, "kernels"), "must not be empty");
  if (cv_folds < 2) throw ConfigError(ju::join(prefix, "cv_folds"), "must be >= 2");
  if (switch_point < 0) throw ConfigError(ju::join(prefix, "switch_point"), "must be >= 0");
  if (window_k < 0) throw ConfigError(ju::join(prefix, "window_k"), "must be >= 0 (0 = default schedule)");
}

json FqiConfig::to_json() const {
  json ks = json::array();
  for (const auto& k : kernels) ks.push_back(k.to_json());
  return {{"iterations", iterations},
          {"gamma", gamma},
          {"function_class", function_class == FunctionClass::ridge ? "ridge" : "krr"},
          {"beta", beta},
          {"lambda", lambda},
          {"lambda_grid", lambda_grid},
          {"kernels", ks},
          {"cv_folds", cv_folds},
          {"switch_point", switch_point},
          {"window_k", window_k}};
}

FqiConfig FqiConfig::from_json(const json& j, const std::string& prefix) {
  ju::allow_only(j, prefix,
                 {"iterations", "gamma", "function_class", "beta", "lambda", "lambda_grid", "kernels", "cv_folds",
                  "switch_point", "window_k", "mode"});
  FqiConfig c;
  ju::read(j, "iterations", prefix, c.iterations);
  ju::read(j, "gamma", prefix, c.gamma);
  ju::read(j, "beta", prefix, c.beta);
  ju::read(j, "lambda", prefix, c.lambda);
  ju::read(j, "lambda_grid", prefix, c.lambda_grid);
  ju::read(j, "cv_folds", prefix, c.cv_folds);
  ju::read(j, "switch_point", prefix, c.switch_point);
  ju::read(j, "window_k", prefix, c.window_k);
  if (j.contains("function_class")) {
    std::string fc;
    ju::read(j, "function_class", prefix, fc);
    if (fc == "ridge") {
      c.function_class = FunctionClass::ridge;
    } else if (fc == "krr") {
      c.function_class = FunctionClass::krr;
    } else {
      throw ConfigError(ju::join(prefix, "function_class"), "expected 'ridge' or 'krr'");
    }
  }
  if (j.contains("mode")) {
    std::string m;
    ju::read(j, "mode", prefix, m);
    try {
      c.mode = fqi_mode_from_string(m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(ju::join(prefix, "mode"), e.what());
    }
  }
  if (j.contains("kernels")) {
    c.kernels.clear();
    const auto& ks = j.at("kernels");
    if (!ks.is_array()) throw ConfigError(ju::join(prefix, "kernels"), "expected an array");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      try {
        c.kernels.push_back(KernelSpec::from_json(ks[i]));
      } catch (const std::exception& e) {
        throw ConfigError(ju::join(prefix, "kernels[" + std::to_string(i) + "]"), e.what());
      }
    }
  }
  c.validate(prefix);
  return c;
}

double backup_value(std::span<const double> q, std::span<const double> u, bool pessimistic, double v_max) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < q.size(); ++a) {
    const double v = pessimistic ? std::max(q[a] - u[a], -v_max) : q[a];
    best = std::max(best, v);
  }
  return best;
}

double fqi_target(double r_star, bool delta, double gamma, double next_uncensored, double next_censored) {
  return r_star + gamma * (delta ? next_uncensored : next_censored);
}

PolicyArtifact::PolicyArtifact(EnvConfig env, QEnsemble ensemble, bool pessimistic,
                               std::shared_ptr<const FeatureMap> features)
    : env_(std::move(env)),
      ensemble_(std::move(ensemble)),
      pessimistic_(pessimistic),
      features_(features ? std::move(features) : std::make_shared<StandardFeatureMap>(env_)) {
  if (ensemble_.models.empty()) throw std::invalid_argument("policy artifact needs at least the depth-0 model");
}

std::vector<double> PolicyArtifact::action_values(const HistoryBlock& block) const {
  const int depth = block.depth();
  if (depth > n_hat()) throw std::invalid_argument("no model for censoring depth " + std::to_string(depth));
  const auto& grid = env_.actions;
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(features_->dim(depth)));
  encode_actions(*features_, block, grid, std::nullopt, rows, 0);
  const auto& model = ensemble_.models[static_cast<std::size_t>(depth)];
  Eigen::VectorXd q = model.predict_rows(rows).cwiseMax(-ensemble_.v_max).cwiseMin(ensemble_.v_max);
  if (pessimistic_ && ensemble_.beta > 0.0) {
    q -= model.uq_rows(ensemble_.beta, rows);
    q = q.cwiseMax(-ensemble_.v_max);
  }
  return {q.data(), q.data() + q.size()};
}

Decision PolicyArtifact::act(std::span<const Observation> observations, std::span<const Action> actions) const {
  if (observations.empty()) throw std::invalid_argument("act needs at least the current observation");
  const int depth = censoring_depth(observations);
  const int nh = n_hat();
  if (depth > nh) return {env_.actions.max_action_index(), true, true};
  if (depth == nh && nh >= 1) return {env_.actions.max_action_index(), true, false};
  const auto i = static_cast<std::size_t>(depth);
  if (observations.size() < i + 1 || actions.size() < i)
    throw std::invalid_argument("history window is shorter than the censoring depth");
  const HistoryBlock block{observations.subspan(observations.size() - i - 1), actions.subspan(actions.size() - i)};
  const auto values = action_values(block);
  // max_element returns the first maximum, i.e. the lowest index.
  const auto best = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  return {best, false, false};
}

Decision PolicyArtifact::decide(const DecisionContext& ctx, Rng&) const { return act(ctx.observations, ctx.actions); }

std::vector<double> PolicyArtifact::probabilities(const DecisionContext& ctx) const {
  std::vector<double> p(env_.actions.size(), 0.0);
  p[act(ctx.observations, ctx.actions).action] = 1.0;
  return p;
}

json PolicyArtifact::to_json() const {
  json models = json::array();
  for (const auto& m : ensemble_.models) models.push_back(m.to_json(pessimistic_));
  return {{"format", "cfqi-policy"},
          {"version", kArtifactVersion},
          {"env_fingerprint", env_.fingerprint()},
          {"env", env_.to_json()},
          {"feature_map", features_->name()},
          {"mode", to_string(ensemble_.mode)},
          {"gamma", ensemble_.gamma},
          {"iterations", ensemble_.iterations},
          {"beta", ensemble_.beta},
          {"v_max", ensemble_.v_max},
          {"pessimistic", pessimistic_},
          {"n_hat", n_hat()},
          {"a_max", env_.actions.max_action_index()},
          {"tie_break", "lowest_index"},
          {"models", models}};
}

std::string PolicyArtifact::summary_hash() const { return hex16(fnv1a(to_json().dump())); }

void save_policy(const PolicyArtifact& artifact, const std::filesystem::path& path) {
  if (artifact.features().name() != "standard")
    throw std::invalid_argument("only artifacts over the standard feature map can be saved");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << artifact.to_json().dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PolicyArtifact policy_from_json(const json& j, const EnvConfig* expected_env) {
  if (!j.is_object() || j.value("format", "") != "cfqi-policy") throw ParseError(1, "not a policy artifact");
  if (j.value("version", -1) != kArtifactVersion)
    throw CompatibilityError("unsupported policy artifact version " + j.value("version", json(-1)).dump());
  try {
    EnvConfig env = EnvConfig::from_json(j.at("env"));
    if (env.fingerprint() != j.at("env_fingerprint").get<std::string>())
      throw ParseError(1, "environment fingerprint does not match the embedded configuration");
    if (expected_env && expected_env->fingerprint() != env.fingerprint()) {
      std::string why = "artifact was trained under environment " + env.fingerprint() + ", expected " +
                        expected_env->fingerprint();
      if (expected_env->actions.prices() != env.actions.prices()) why += " (price grid differs)";
      if (expected_env->actions.orders() != env.actions.orders()) why += " (order grid differs)";
      throw CompatibilityError(why);
    }
    if (j.at("feature_map").get<std::string>() != "standard")
      throw ParseError(1, "unknown feature map " + j.at("feature_map").dump());
    QEnsemble ens;
    ens.mode = fqi_mode_from_string(j.at("mode").get<std::string>());
    ens.gamma = j.at("gamma").get<double>();
    ens.iterations = j.at("iterations").get<int>();
    ens.beta = j.at("beta").get<double>();
    ens.v_max = j.at("v_max").get<double>();
    for (const auto& m : j.at("models")) ens.models.push_back(KernelRidgeModel::from_json(m));
    if (static_cast<int>(ens.models.size()) != j.at("n_hat").get<int>() + 1)
      throw ParseError(1, "model count does not match n_hat");
    return PolicyArtifact(std::move(env), std::move(ens), j.at("pessimistic").get<bool>());
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("malformed policy artifact: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(1, std::string("malformed policy artifact: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(1, std::string("malformed policy artifact: ") + e.what());
  }
}

PolicyArtifact load_policy(const std::filesystem::path& path, const EnvConfig* expected_env) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ParseError(1, std::string("corrupted policy artifact: ") + e.what());
  }
  return policy_from_json(j, expected_env);
}

namespace {

struct Record {
  double r_star;
  bool delta;
  int next_depth;          // depth of the next block's model (0 when uncensored)
  std::size_t next_query;  // index into that depth's query set
};

struct QuerySet {
  Eigen::MatrixXd rows;
  std::size_t per_query = 0;  // actions evaluated per query
  std::size_t count() const { return per_query == 0 ? 0 : static_cast<std::size_t>(rows.rows()) / per_query; }
};

}  // namespace

TrainResult run_fqi(const AugmentedDataset& aug, const EnvConfig& env, const FqiConfig& cfg, std::uint64_t seed,
                    std::shared_ptr<const FeatureMap> features) {
  cfg.validate();
  const auto& ds = aug.data;
  if (ds.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");
  if (!features) features = std::make_shared<StandardFeatureMap>(env);
  const auto& grid = env.actions;

  TrainReport report;
  report.window_k = cfg.window_k > 0 ? std::min(cfg.window_k, ds.horizon)
                                     : default_window_k(ds.n_traj(), ds.horizon, cfg.gamma);
  const int n_hat = estimate_n_hat(ds, report.window_k);
  const DepthPartition part = partition(ds, n_hat);
  report.n_hat = n_hat;
  report.discarded = part.discarded;
  for (int i = 0; i <= n_hat; ++i) {
    const auto size = part.buckets[static_cast<std::size_t>(i)].size();
    report.bucket_sizes.push_back(size);
    if (size == 0)
      throw CoverageError(i, "coverage failure: no transitions preceded by exactly " + std::to_string(i) +
                                 " censored periods, but n_hat = " + std::to_string(n_hat));
  }

  std::vector<TrajectoryView> views;
  views.reserve(ds.trajectories.size());
  for (const auto& tr : ds.trajectories) views.emplace_back(tr);

  const double v_max = r_max_bound(env) / (1.0 - cfg.gamma);
  const std::size_t n_depth = static_cast<std::size_t>(n_hat) + 1;
  const std::size_t n_act = grid.size();
  const auto boundary_only = [&](int depth) -> std::optional<std::size_t> {
    if (depth == n_hat && n_hat >= 1) return grid.max_action_index();
    return std::nullopt;
  };

  // Regression inputs per depth and the next-block queries every record backs up from.
  std::vector<Eigen::MatrixXd> X(n_depth);
  std::vector<std::vector<Record>> records(n_depth);
  std::vector<QuerySet> queries(n_depth);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pending(n_depth);  // (traj, t) per query
  for (std::size_t i = 0; i < n_depth; ++i) {
    const auto& bucket = part.buckets[i];
    X[i].resize(static_cast<Eigen::Index>(bucket.size()), static_cast<Eigen::Index>(features->dim(static_cast<int>(i))));
    Eigen::VectorXd buf(X[i].cols());
    for (std::size_t r = 0; r < bucket.size(); ++r) {
      const auto& ref = bucket[r];
      const auto& view = views[ref.traj];
      const auto& step = ds.trajectories[ref.traj].steps[ref.t];
      const HistoryBlock block{std::span(view.observations).subspan(ref.t - i, i + 1),
                               std::span(view.actions).subspan(ref.t - i, i)};
      features->encode(block, step.a, buf.data());
      X[i].row(static_cast<Eigen::Index>(r)) = buf.transpose();
      Record rec{aug.reward(ref.traj, ref.t), step.delta, 0, 0};
      if (!step.delta) {
        if (i + 1 >= n_depth)
          throw ConsistencyError("censored transition at depth n_hat = " + std::to_string(n_hat));
        rec.next_depth = static_cast<int>(i) + 1;
      }
      rec.next_query = pending[static_cast<std::size_t>(rec.next_depth)].size();
      pending[static_cast<std::size_t>(rec.next_depth)].emplace_back(ref.traj, ref.t);
      records[i].push_back(rec);
    }
  }
  for (std::size_t j = 0; j < n_depth; ++j) {
    const auto only = boundary_only(static_cast<int>(j));
    auto& qs = queries[j];
    qs.per_query = only ? 1 : n_act;
    qs.rows.resize(static_cast<Eigen::Index>(pending[j].size() * qs.per_query),
                   static_cast<Eigen::Index>(features->dim(static_cast<int>(j))));
    for (std::size_t q = 0; q < pending[j].size(); ++q) {
      const auto [traj, t] = pending[j][q];
      const auto& view = views[traj];
      // Next block: W_{t+1} alone, or W_{t-i} .. W_{t+1} with A_{t-i} .. A_t when censored.
      const std::size_t start = t + 1 - j;
      const HistoryBlock block{std::span(view.observations).subspan(start, j + 1),
                               std::span(view.actions).subspan(start, j)};
      encode_actions(*features, block, grid, only, qs.rows, static_cast<Eigen::Index>(q * qs.per_query));
    }
  }

  std::vector<KrrDesign> designs;
  designs.reserve(n_depth);
  for (std::size_t i = 0; i < n_depth; ++i) {
    if (cfg.function_class == FunctionClass::ridge) {
      designs.emplace_back(X[i], std::vector<KernelSpec>{KernelSpec{KernelKind::linear}},
                           std::vector<double>{cfg.lambda}, 1, derive_seed(seed, i), false, Representation::primal);
    } else {
      designs.emplace_back(X[i], cfg.kernels, cfg.lambda_grid, cfg.cv_folds, derive_seed(seed, i), true);
    }
  }

  std::vector<std::optional<KernelRidgeModel>> models(n_depth);
  std::vector<CvChoice> choices(n_depth);
  // U depends only on the design and the selected (kernel, lambda); cache it across iterations.
  std::vector<std::map<std::pair<std::size_t, std::size_t>, Eigen::VectorXd>> uq_cache(n_depth);

  for (int k = 0; k < cfg.iterations; ++k) {
    IterationLog log;
    log.iteration = k;
    log.pessimistic = cfg.pessimistic_at(k);
    std::vector<Eigen::VectorXd> next_value(n_depth);
    for (std::size_t j = 0; j < n_depth; ++j) {
      const auto& qs = queries[j];
      const auto count = qs.count();
      next_value[j] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count));
      if (!models[j] || count == 0) continue;
      Eigen::VectorXd q = models[j]->predict_rows(qs.rows);
      for (Eigen::Index r = 0; r < q.size(); ++r) {
        if (std::abs(q(r)) > v_max) {
          ++report.clipped_predictions;
          q(r) = std::clamp(q(r), -v_max, v_max);
        }
      }
      Eigen::VectorXd u = Eigen::VectorXd::Zero(q.size());
      if (log.pessimistic && cfg.beta > 0.0) {
        const auto key = std::make_pair(choices[j].kernel, choices[j].lambda);
        auto it = uq_cache[j].find(key);
        if (it == uq_cache[j].end()) it = uq_cache[j].emplace(key, models[j]->uq_rows(1.0, qs.rows)).first;
        u = cfg.beta * it->second;
      }
      for (std::size_t qi = 0; qi < count; ++qi) {
        const auto off = static_cast<Eigen::Index>(qi * qs.per_query);
        const auto len = static_cast<std::size_t>(qs.per_query);
        next_value[j](static_cast<Eigen::Index>(qi)) =
            backup_value(std::span<const double>(q.data() + off, len), std::span<const double>(u.data() + off, len),
                         log.pessimistic, v_max);
      }
    }

    std::vector<std::optional<KernelRidgeModel>> fitted(n_depth);
    for (std::size_t i = 0; i < n_depth; ++i) {
      Eigen::VectorXd y(static_cast<Eigen::Index>(records[i].size()));
      for (std::size_t r = 0; r < records[i].size(); ++r) {
        const auto& rec = records[i][r];
        const double v = next_value[static_cast<std::size_t>(rec.next_depth)](static_cast<Eigen::Index>(rec.next_query));
        double target = fqi_target(rec.r_star, rec.delta, cfg.gamma, v, v);
        if (std::abs(target) > v_max) {
          ++log.clipped_targets;
          target = std::clamp(target, -v_max, v_max);
        }
        y(static_cast<Eigen::Index>(r)) = target;
      }
      choices[i] = designs[i].select(y);
      fitted[i] = designs[i].fit(y, choices[i]);
      std::ostringstream label;
      label << designs[i].kernels()[choices[i].kernel].label() << "/" << designs[i].lambdas()[choices[i].lambda];
      log.choice.push_back(label.str());
    }
    models = std::move(fitted);
    report.iterations.push_back(std::move(log));
  }

  QEnsemble ens;
  ens.mode = cfg.mode;
  ens.gamma = cfg.gamma;
  ens.iterations = cfg.iterations;
  ens.beta = cfg.beta;
  ens.v_max = v_max;
  for (auto& m : models) ens.models.push_back(std::move(*m));
  const bool pessimistic = cfg.mode == FqiMode::pcfqi;
  return {PolicyArtifact(env, std::move(ens), pessimistic, features), std::move(report)};
}

}  // namespace cfqi
