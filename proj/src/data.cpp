#include "cfqi/data.hpp"

#include <fstream>
#include <stdexcept>

#include "cfqi/errors.hpp"

namespace cfqi {

std::size_t OfflineDataset::size() const {
  std::size_t n = 0;
  for (const auto& tr : trajectories) n += tr.steps.size();
  return n;
}

void OfflineDataset::validate() const {
  if (horizon < 2) throw ConsistencyError("horizon must be >= 2");
  for (const auto& tr : trajectories) {
    if (tr.steps.size() != static_cast<std::size_t>(horizon - 1))
      throw ConsistencyError("trajectory " + std::to_string(tr.id) + " has " + std::to_string(tr.steps.size()) +
                             " transitions, expected " + std::to_string(horizon - 1));
    for (std::size_t k = 0; k < tr.steps.size(); ++k) {
      const auto& s = tr.steps[k];
      const std::string where = "trajectory " + std::to_string(tr.id) + " t=" + std::to_string(s.t);
      if (s.traj != tr.id) throw ConsistencyError(where + ": trajectory id mismatch");
      if (k > 0 && s.t <= tr.steps[k - 1].t) throw ConsistencyError(where + ": t not strictly increasing");
      if (s.r_obs.has_value() != s.delta) throw ConsistencyError(where + ": reward present iff delta = 1");
      if (s.z > s.w.y + 1e-9) throw ConsistencyError(where + ": sales exceed inventory");
      if (k == 0 && !s.w.delta_prev) throw ConsistencyError(where + ": Delta_{-1} must be 1");
      if (s.w_next.z_prev != s.z || s.w_next.delta_prev != s.delta)
        throw ConsistencyError(where + ": next observation disagrees with (z, delta)");
      if (k > 0 && !(tr.steps[k - 1].w_next == s.w))
        throw ConsistencyError(where + ": observation does not chain from previous transition");
    }
  }
}

OfflineDataset generate_dataset(const EnvConfig& env, const BehaviorPolicy& policy, int n_traj, int horizon,
                                std::uint64_t seed) {
  if (n_traj < 1) throw ConfigError("data.n_traj", "must be >= 1");
  if (horizon < 2) throw ConfigError("data.horizon", "must be >= 2");
  if (!policy.impl) throw ConfigError("data.behavior", "behavior policy not initialised");
  env.validate();
  const auto& grid = env.actions;

  OfflineDataset ds;
  ds.horizon = horizon;
  ds.meta = {env.fingerprint(), seed, to_string(policy.kind), env.to_json()};
  ds.trajectories.resize(static_cast<std::size_t>(n_traj));
  for (int j = 0; j < n_traj; ++j) {
    Rng env_rng(derive_seed(seed, static_cast<std::uint64_t>(j), 0));
    Rng pol_rng(derive_seed(seed, static_cast<std::uint64_t>(j), 1));
    Episode ep(env, env_rng);
    std::vector<Observation> obs{ep.observation()};
    std::vector<Action> acts;
    auto& tr = ds.trajectories[static_cast<std::size_t>(j)];
    tr.id = j;
    tr.steps.reserve(static_cast<std::size_t>(horizon - 1));
    for (int t = 0; t + 1 < horizon; ++t) {
      const UnderlyingState truth = ep.state();
      DecisionContext ctx{obs, acts, &truth, ep.censor_run()};
      const Action a = grid.at(policy.impl->decide(ctx, pol_rng).action);
      const StepOutcome out = ep.advance(a, env_rng);
      ObservedTransition rec;
      rec.traj = j;
      rec.t = t;
      rec.w = obs.back();
      rec.a = a;
      rec.w_next = ep.observation();
      rec.delta = out.delta;
      rec.z = out.sales;
      if (out.delta) rec.r_obs = out.reward;
      tr.steps.push_back(rec);
      obs.push_back(rec.w_next);
      acts.push_back(a);
    }
  }
  return ds;
}

namespace {

json header_record(const OfflineDataset& ds) {
  return json{{"type", "header"},
              {"fingerprint", ds.meta.fingerprint},
              {"n_traj", ds.n_traj()},
              {"horizon", ds.horizon},
              {"seed", ds.meta.seed},
              {"behavior", ds.meta.behavior},
              {"env", ds.meta.env}};
}

json transition_record(const ObservedTransition& s) {
  json j{{"traj", s.traj},
         {"t", s.t},
         {"x", s.w.x},
         {"y", s.w.y},
         {"z_prev", s.w.z_prev},
         {"delta_prev", s.w.delta_prev},
         {"p", s.a.price},
         {"o", s.a.order},
         {"z", s.z},
         {"delta", s.delta},
         {"r_obs", nullptr},
         {"x_next", s.w_next.x},
         {"y_next", s.w_next.y}};
  if (s.r_obs) j["r_obs"] = *s.r_obs;
  return j;
}

void write_all(const OfflineDataset& ds, const std::vector<std::vector<double>>* r_star,
               const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << header_record(ds).dump() << '\n';
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const auto& tr = ds.trajectories[j];
    for (std::size_t k = 0; k < tr.steps.size(); ++k) {
      json rec = transition_record(tr.steps[k]);
      if (r_star) rec["r_star"] = (*r_star)[j][k];
      out << rec.dump() << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

template <class T>
T field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(line, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(line, std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path) { write_all(ds, nullptr, path); }

void save_dataset(const OfflineDataset& ds, const std::vector<std::vector<double>>& r_star,
                  const std::filesystem::path& path) {
  write_all(ds, &r_star, path);
}

OfflineDataset load_dataset(const std::filesystem::path& path) { return load_dataset(path, nullptr); }

OfflineDataset load_dataset(const std::filesystem::path& path, std::vector<std::vector<double>>* r_star) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  OfflineDataset ds;
  std::string text;
  std::size_t line = 0;
  std::size_t expected_traj = 0;
  bool have_header = false;
  if (r_star) r_star->clear();

  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed record: ") + e.what());
    }
    if (!have_header) {
      if (field<std::string>(j, "type", line) != "header") throw ParseError(line, "first record must be the header");
      ds.meta.fingerprint = field<std::string>(j, "fingerprint", line);
      ds.meta.seed = field<std::uint64_t>(j, "seed", line);
      ds.meta.behavior = field<std::string>(j, "behavior", line);
      ds.meta.env = j.value("env", json());
      ds.horizon = field<int>(j, "horizon", line);
      expected_traj = field<std::size_t>(j, "n_traj", line);
      have_header = true;
      continue;
    }
    ObservedTransition s;
    s.traj = field<int>(j, "traj", line);
    s.t = field<int>(j, "t", line);
    s.w.x = field<Features>(j, "x", line);
    s.w.y = field<double>(j, "y", line);
    s.w.z_prev = field<double>(j, "z_prev", line);
    s.w.delta_prev = field<bool>(j, "delta_prev", line);
    s.a = {field<double>(j, "p", line), field<double>(j, "o", line)};
    s.z = field<double>(j, "z", line);
    s.delta = field<bool>(j, "delta", line);
    if (!j.contains("r_obs")) throw ParseError(line, "missing field 'r_obs'");
    if (!j["r_obs"].is_null()) s.r_obs = field<double>(j, "r_obs", line);
    if (s.r_obs.has_value() != s.delta)
      throw ParseError(line, "record (traj " + std::to_string(s.traj) + ", t " + std::to_string(s.t) +
                                 "): r_obs must be present iff delta = 1");
    s.w_next = Observation{field<Features>(j, "x_next", line), field<double>(j, "y_next", line), s.z, s.delta};

    if (ds.trajectories.empty() || ds.trajectories.back().id != s.traj) {
      if (s.traj != static_cast<int>(ds.trajectories.size()))
        throw ParseError(line, "trajectory ids must be consecutive from 0");
      ds.trajectories.push_back(Trajectory{s.traj, {}});
      if (r_star) r_star->emplace_back();
    }
    ds.trajectories.back().steps.push_back(s);
    if (r_star) r_star->back().push_back(field<double>(j, "r_star", line));
  }
  if (!have_header) throw ParseError(line, "empty file: missing header");
  if (ds.trajectories.size() != expected_traj)
    throw ParseError(line, "header declares " + std::to_string(expected_traj) + " trajectories, found " +
                               std::to_string(ds.trajectories.size()));
  for (const auto& tr : ds.trajectories)
    if (tr.steps.size() != static_cast<std::size_t>(ds.horizon - 1))
      throw ParseError(line, "trajectory " + std::to_string(tr.id) + " is truncated: " +
                                 std::to_string(tr.steps.size()) + " of " + std::to_string(ds.horizon - 1) +
                                 " transitions");
  try {
    ds.validate();
  } catch (const ConsistencyError& e) {
    throw ParseError(line, e.what());
  }
  return ds;
}

BehaviorPolicy plugin_optimal_policy(std::shared_ptr<const Policy> artifact, const std::string& artifact_fingerprint,
                                     const ActionGrid& artifact_grid, const EnvConfig& env) {
  if (artifact_grid.prices() != env.actions.prices() || artifact_grid.orders() != env.actions.orders())
    throw CompatibilityError("policy artifact action grid differs from the environment's");
  if (artifact_fingerprint != env.fingerprint())
    throw CompatibilityError("policy artifact was built for environment " + artifact_fingerprint + ", not " +
                             env.fingerprint());
  return {BehaviorKind::plugin_optimal, 0.0, std::move(artifact)};
}

TrajectoryView::TrajectoryView(const Trajectory& traj) {
  observations.reserve(traj.steps.size() + 1);
  actions.reserve(traj.steps.size());
  for (const auto& s : traj.steps) {
    observations.push_back(s.w);
    actions.push_back(s.a);
  }
  if (!traj.steps.empty()) observations.push_back(traj.steps.back().w_next);
}

}  // namespace cfqi
