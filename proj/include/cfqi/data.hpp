#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfqi/env.hpp"
#include "cfqi/policy.hpp"

namespace cfqi {

/// One logged period (W_t, A_t, W_{t+1}, R_t 1[Delta_t = 1]).
struct ObservedTransition {
  int traj = 0;
  int t = 0;
  Observation w;
  Action a;
  Observation w_next;
  std::optional<double> r_obs;  // present iff delta
  bool delta = true;
  double z = 0.0;  // sales Z_t

  friend bool operator==(const ObservedTransition&, const ObservedTransition&) = default;
};

struct Trajectory {
  int id = 0;
  std::vector<ObservedTransition> steps;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct DatasetMeta {
  std::string fingerprint;  // environment config fingerprint
  std::uint64_t seed = 0;
  std::string behavior;
  json env;  // full environment config, so stage commands can be chained from files
  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct OfflineDataset {
  std::vector<Trajectory> trajectories;
  int horizon = 0;  // T; each trajectory holds T - 1 transitions
  DatasetMeta meta;

  std::size_t n_traj() const { return trajectories.size(); }
  std::size_t size() const;
  /// Throws ConsistencyError when an invariant does not hold.
  void validate() const;
  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

/// Rolls out n_traj i.i.d. trajectories of `horizon` observations under the behavior policy.
OfflineDataset generate_dataset(const EnvConfig& env, const BehaviorPolicy& policy, int n_traj, int horizon,
                                std::uint64_t seed);

/// Newline-delimited JSON: a header record, then one transition per line.
void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path);
OfflineDataset load_dataset(const std::filesystem::path& path);

/// Same record layout with an extra `r_star` field per transition.
void save_dataset(const OfflineDataset& ds, const std::vector<std::vector<double>>& r_star,
                  const std::filesystem::path& path);
OfflineDataset load_dataset(const std::filesystem::path& path, std::vector<std::vector<double>>* r_star);

/// Wraps a censoring-aware policy artifact (e.g. from the DP oracle) as a behavior policy.
/// Throws CompatibilityError when the artifact was built for a different environment.
BehaviorPolicy plugin_optimal_policy(std::shared_ptr<const Policy> artifact, const std::string& artifact_fingerprint,
                                     const ActionGrid& artifact_grid, const EnvConfig& env);

/// Transition-level view of one trajectory: W_0..W_{T-1} and A_0..A_{T-2}.
struct TrajectoryView {
  std::vector<Observation> observations;
  std::vector<Action> actions;
  explicit TrajectoryView(const Trajectory& traj);
};

}  // namespace cfqi
