#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfqi/rng.hpp"

namespace cfqi {

using json = nlohmann::json;

/// Exogenous covariates X_t = (interest rate, economy state in {0, 1}).
using Features = std::array<double, 2>;

struct DemandParams {
  double theta0 = 22.0;
  Features theta_x{1.0, 2.0};
  double beta = 4.0;  // price sensitivity, > 0
  double rho = 0.5;   // AR coefficient, |rho| < 1
  double noise_sd = 2.5;
  double d_max = 25.0;

  /// Mean of the unclamped demand given covariates, price and lagged demand.
  double mean(const Features& x, double price, double d_prev) const {
    return theta0 + theta_x[0] * x[0] + theta_x[1] * x[1] - beta * price + rho * d_prev;
  }
};

struct CostParams {
  double stockout = 2.0;
  double ordering = 3.0;
  double holding = 1.0;
};

/// Interest rate follows a clamped AR(1); the economy state is a two-state chain.
struct FeatureProcess {
  double ir_ar_coeff = 0.8;
  double ir_noise_sd = 0.6;
  double econ_switch_prob = 0.1;

  double ir_stationary_sd() const;
  /// Interest rate is clamped to [-bound, bound] with bound = 3 stationary sd.
  double ir_bound() const { return 3.0 * ir_stationary_sd(); }
};

struct Action {
  double price = 0.0;
  double order = 0.0;
  friend bool operator==(const Action&, const Action&) = default;
};

/// Finite price x order grid. Index order is lexicographic: lowest price first, then lowest order.
class ActionGrid {
 public:
  ActionGrid() = default;
  ActionGrid(std::vector<double> prices, std::vector<double> orders);

  std::size_t size() const { return prices_.size() * orders_.size(); }
  Action at(std::size_t index) const {
    return {prices_[index / orders_.size()], orders_[index % orders_.size()]};
  }
  std::size_t price_index(std::size_t index) const { return index / orders_.size(); }
  std::size_t order_index(std::size_t index) const { return index % orders_.size(); }
  /// Throws std::out_of_range when the action is not on the grid.
  std::size_t index_of(const Action& a) const;
  std::size_t price_index_of(double price) const;
  bool contains(const Action& a) const;

  /// Safe boundary action: maximum price together with maximum order.
  Action max_action() const { return {prices_.back(), orders_.back()}; }
  std::size_t max_action_index() const { return size() - 1; }

  const std::vector<double>& prices() const { return prices_; }
  const std::vector<double>& orders() const { return orders_; }
  double max_price() const { return prices_.back(); }
  double max_order() const { return orders_.back(); }

 private:
  std::vector<double> prices_;
  std::vector<double> orders_;
};

struct UnderlyingState {
  Features x{0.0, 0.0};
  double y = 0.0;       // on-hand inventory
  double d_prev = 0.0;  // lagged demand D_{t-1}
};

struct Observation {
  Features x{0.0, 0.0};
  double y = 0.0;
  double z_prev = 0.0;     // lagged sales Z_{t-1}
  bool delta_prev = true;  // Delta_{t-1}; true by convention at t = 0
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct EnvConfig {
  DemandParams demand;
  CostParams costs;
  FeatureProcess features;
  ActionGrid actions{{4.0, 4.25, 4.5}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}};
  double y_cap = 25.0;
  /// Longest censoring run the demand generator allows (n_true); negative disables truncation.
  int max_censor_run = 3;
  double initial_inventory = 10.0;

  /// Throws ConfigError naming the dotted field path (rooted at `prefix`).
  void validate(const std::string& prefix = "env") const;
  json to_json() const;
  static EnvConfig from_json(const json& j, const std::string& prefix = "env");
  /// Stable hex digest of the canonical JSON form.
  std::string fingerprint() const;
  bool truncates() const { return max_censor_run >= 0; }
};

/// Demand for a given shock: clamp(theta0 + theta_x.x - beta p + rho d_prev + eps, 0, d_max).
double demand_from_shock(const DemandParams& params, const Features& x, double price, double d_prev,
                         double shock);

double draw_demand(const DemandParams& params, const Features& x, double price, double d_prev, Rng& rng);

/// Draw from the clamped demand law conditioned on demand <= ceiling (exact inverse-CDF resample).
double draw_demand_below(const DemandParams& params, const Features& x, double price, double d_prev,
                         double ceiling, Rng& rng);

/// p min(y, d) - c1 (d - y)^+ - c2 o - c3 (y - d)^+
double reward(const CostParams& costs, double price, double order, double y, double demand);

Features next_features(const FeatureProcess& fp, const Features& x, Rng& rng);
Features initial_features(const FeatureProcess& fp, Rng& rng);
UnderlyingState initial_state(const EnvConfig& cfg, Rng& rng);

struct StepOutcome {
  UnderlyingState next;
  double reward = 0.0;
  double demand = 0.0;
  double sales = 0.0;  // Z_t = min(Y_t, D_t)
  bool delta = true;   // Delta_t = 1{Y_t >= D_t}
};

/// One period of the underlying process. `censor_run` is the number of consecutive censored
/// periods immediately before this one; when it has reached cfg.max_censor_run the demand is
/// drawn below the on-hand inventory so the period is uncensored.
StepOutcome step(const EnvConfig& cfg, const UnderlyingState& state, const Action& action, Rng& rng,
                 int censor_run = 0);

/// Project the underlying state onto the observed coordinates W_t = (X_t, Y_t, Z_{t-1}, Delta_{t-1}).
Observation observe(const UnderlyingState& state, double z_prev, bool delta_prev);

/// Tracks a single trajectory: underlying state plus what the firm has observed so far.
class Episode {
 public:
  Episode(const EnvConfig& cfg, Rng& rng);
  Episode(const EnvConfig& cfg, UnderlyingState start);

  const UnderlyingState& state() const { return state_; }
  Observation observation() const { return observe(state_, z_prev_, delta_prev_); }
  int censor_run() const { return censor_run_; }
  StepOutcome advance(const Action& action, Rng& rng);

 private:
  const EnvConfig* cfg_;
  UnderlyingState state_;
  double z_prev_;
  bool delta_prev_ = true;
  int censor_run_ = 0;
};

}  // namespace cfqi
