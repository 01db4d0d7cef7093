#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cfqi/policy.hpp"

namespace cfqi {

/// Grid used by the DP solvers: interest-rate bins x economy state, integer inventory levels,
/// integer demand levels and the censoring run.
struct Discretization {
  int ir_bins = 5;
  double ir_bound = 0.0;
  int n_y = 0;
  int n_d = 0;
  int n_runs = 1;  // runs 0 .. n_cap

  static Discretization for_env(const EnvConfig& env, int n_cap, int ir_bins = 5);

  int n_x() const { return ir_bins * 2; }
  int ir_bin(double ir) const;
  double ir_center(int bin) const;
  int x_index(const Features& x) const { return ir_bin(x[0]) * 2 + (x[1] > 0.5 ? 1 : 0); }
  Features x_center(int xi) const { return {ir_center(xi / 2), static_cast<double>(xi % 2)}; }
  int y_level(double y) const;
  int d_level(double d) const;
  std::size_t n_keys() const { return static_cast<std::size_t>(n_runs * n_x() * n_y * n_d); }
  std::size_t key(int r, int xi, int y, int m) const {
    return static_cast<std::size_t>(((r * n_x() + xi) * n_y + y) * n_d + m);
  }

  json to_json() const;
  static Discretization from_json(const json& j);
  friend bool operator==(const Discretization&, const Discretization&) = default;
};

/// P(round(D) = k), k = 0 .. n_d - 1, for D = clamp(mean + eps, 0, d_max), eps ~ N(0, sd^2).
std::vector<double> demand_bin_probs(double mean, double sd, int n_d);

/// Grid belief over the last period's demand, filtered through censored observations.
namespace belief {
std::vector<double> point(int n_d, double d);
/// Distribution of this period's demand given the belief over last period's.
std::vector<double> predict(const DemandParams& dp, const Features& x, double price, const std::vector<double>& prev);
/// Restrict to demand levels strictly above y and renormalise; returns the removed-mass complement.
double condition_above(std::vector<double>& pred, double y);
double mean(const std::vector<double>& b);
}  // namespace belief

struct DpConfig {
  double gamma = 0.9;
  int n_cap = 3;
  int max_sweeps = 2000;
  double tol_factor = 1e-3;  // stop once the sup-norm sweep delta is below tol_factor * R_max
};

struct ValueTable {
  Discretization disc;
  std::vector<double> values;  // V over keys
  std::vector<double> sweep_deltas;
  double gamma = 0.0;
  bool converged = false;

  int sweeps() const { return static_cast<int>(sweep_deltas.size()); }
};

enum class TabularKind { censored, oracle };

/// Greedy policy read off a DP value table. The censored kind acts on the observed history only,
/// keyed by (run, x, y, rounded posterior mean of last demand); the oracle kind reads the true state.
class TabularPolicy final : public Policy {
 public:
  TabularPolicy(EnvConfig env, Discretization disc, TabularKind kind, std::vector<std::uint16_t> actions);

  Decision decide(const DecisionContext& ctx, Rng& rng) const override;
  std::vector<double> probabilities(const DecisionContext& ctx) const override;
  std::string name() const override { return kind_ == TabularKind::oracle ? "oracle" : "censored_dp"; }
  bool needs_truth() const override { return kind_ == TabularKind::oracle; }

  std::size_t key_for(const DecisionContext& ctx) const;
  std::size_t action_at(std::size_t key) const { return actions_.at(key); }
  const EnvConfig& env() const { return env_; }
  const Discretization& disc() const { return disc_; }
  TabularKind kind() const { return kind_; }

  json to_json() const;
  static TabularPolicy from_json(const json& j);

 private:
  EnvConfig env_;
  Discretization disc_;
  TabularKind kind_;
  std::vector<std::uint16_t> actions_;
};

void save_tabular_policy(const TabularPolicy& policy, const std::filesystem::path& path);
TabularPolicy load_tabular_policy(const std::filesystem::path& path);

struct DpResult {
  ValueTable table;
  std::shared_ptr<const TabularPolicy> policy;
};

/// Value iteration on the coupled depth-indexed system over observed histories. Expectations are
/// exact sums over integer demand levels; censored histories are summarised by the posterior mean
/// of last period's demand. At run n_cap (or the generator's truncation run, if smaller) only the
/// uncensored continuation remains. Throws NonContractionError if the sweep delta grows for five
/// consecutive sweeps.
DpResult solve_censored_dp(const EnvConfig& env, const DpConfig& cfg);

/// Value iteration on the fully observed process (true lagged demand in the state).
DpResult solve_oracle_dp(const EnvConfig& env, const DpConfig& cfg);

}  // namespace cfqi
