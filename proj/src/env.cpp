#include "cfqi/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cfqi/errors.hpp"
#include "cfqi/json_util.hpp"
#include "cfqi/normal.hpp"

namespace cfqi {

namespace ju = jsonutil;

double FeatureProcess::ir_stationary_sd() const {
  return ir_noise_sd / std::sqrt(1.0 - ir_ar_coeff * ir_ar_coeff);
}

ActionGrid::ActionGrid(std::vector<double> prices, std::vector<double> orders)
    : prices_(std::move(prices)), orders_(std::move(orders)) {
  if (prices_.empty() || orders_.empty()) throw std::invalid_argument("action grid must be nonempty");
  if (!std::is_sorted(prices_.begin(), prices_.end()) || !std::is_sorted(orders_.begin(), orders_.end()))
    throw std::invalid_argument("action grid must be sorted ascending");
}

std::size_t ActionGrid::price_index_of(double price) const {
  for (std::size_t i = 0; i < prices_.size(); ++i)
    if (std::abs(prices_[i] - price) < 1e-9) return i;
  throw std::out_of_range("price not on grid");
}

std::size_t ActionGrid::index_of(const Action& a) const {
  const std::size_t pi = price_index_of(a.price);
  for (std::size_t j = 0; j < orders_.size(); ++j)
    if (std::abs(orders_[j] - a.order) < 1e-9) return pi * orders_.size() + j;
  throw std::out_of_range("order quantity not on grid");
}

bool ActionGrid::contains(const Action& a) const {
  try {
    (void)index_of(a);
    return true;
  } catch (const std::out_of_range&) {
    return false;
  }
}

void EnvConfig::validate(const std::string& prefix) const {
  const auto d = ju::join(prefix, "demand");
  if (!(demand.beta > 0.0)) throw ConfigError(d + ".beta", "must be > 0");
  if (!(std::abs(demand.rho) < 1.0)) throw ConfigError(d + ".rho", "must satisfy |rho| < 1");
  if (!(demand.noise_sd >= 0.0)) throw ConfigError(d + ".noise_sd", "must be >= 0");
  if (!(demand.d_max > 0.0)) throw ConfigError(d + ".d_max", "must be > 0");
  const auto c = ju::join(prefix, "costs");
  if (!(costs.stockout >= 0.0)) throw ConfigError(c + ".stockout", "must be >= 0");
  if (!(costs.ordering >= 0.0)) throw ConfigError(c + ".ordering", "must be >= 0");
  if (!(costs.holding >= 0.0)) throw ConfigError(c + ".holding", "must be >= 0");
  const auto f = ju::join(prefix, "features");
  if (!(std::abs(features.ir_ar_coeff) < 1.0)) throw ConfigError(f + ".ir_ar_coeff", "must satisfy |phi| < 1");
  if (!(features.ir_noise_sd >= 0.0)) throw ConfigError(f + ".ir_noise_sd", "must be >= 0");
  if (!(features.econ_switch_prob >= 0.0 && features.econ_switch_prob <= 1.0))
    throw ConfigError(f + ".econ_switch_prob", "must lie in [0, 1]");
  for (double p : actions.prices())
    if (!(p > 0.0)) throw ConfigError(ju::join(prefix, "prices"), "prices must be > 0");
  for (double o : actions.orders())
    if (!(o >= 0.0)) throw ConfigError(ju::join(prefix, "orders"), "orders must be >= 0");
  if (!(y_cap > 0.0)) throw ConfigError(ju::join(prefix, "y_cap"), "must be > 0");
  if (!(initial_inventory >= 0.0 && initial_inventory <= y_cap))
    throw ConfigError(ju::join(prefix, "initial_inventory"), "must lie in [0, y_cap]");
}

json EnvConfig::to_json() const {
  return json{
      {"demand",
       {{"theta0", demand.theta0},
        {"theta_x", demand.theta_x},
        {"beta", demand.beta},
        {"rho", demand.rho},
        {"noise_sd", demand.noise_sd},
        {"d_max", demand.d_max}}},
      {"costs", {{"stockout", costs.stockout}, {"ordering", costs.ordering}, {"holding", costs.holding}}},
      {"features",
       {{"ir_ar_coeff", features.ir_ar_coeff},
        {"ir_noise_sd", features.ir_noise_sd},
        {"econ_switch_prob", features.econ_switch_prob}}},
      {"prices", actions.prices()},
      {"orders", actions.orders()},
      {"y_cap", y_cap},
      {"max_censor_run", max_censor_run},
      {"initial_inventory", initial_inventory},
  };
}

EnvConfig EnvConfig::from_json(const json& j, const std::string& prefix) {
  EnvConfig cfg;
  ju::allow_only(j, prefix,
                 {"demand", "costs", "features", "prices", "orders", "y_cap", "max_censor_run", "initial_inventory"});
  if (auto it = j.find("demand"); it != j.end()) {
    const auto p = ju::join(prefix, "demand");
    ju::allow_only(*it, p, {"theta0", "theta_x", "beta", "rho", "noise_sd", "d_max"});
    ju::read(*it, "theta0", p, cfg.demand.theta0);
    ju::read(*it, "theta_x", p, cfg.demand.theta_x);
    ju::read(*it, "beta", p, cfg.demand.beta);
    ju::read(*it, "rho", p, cfg.demand.rho);
    ju::read(*it, "noise_sd", p, cfg.demand.noise_sd);
    ju::read(*it, "d_max", p, cfg.demand.d_max);
  }
  if (auto it = j.find("costs"); it != j.end()) {
    const auto p = ju::join(prefix, "costs");
    ju::allow_only(*it, p, {"stockout", "ordering", "holding"});
    ju::read(*it, "stockout", p, cfg.costs.stockout);
    ju::read(*it, "ordering", p, cfg.costs.ordering);
    ju::read(*it, "holding", p, cfg.costs.holding);
  }
  if (auto it = j.find("features"); it != j.end()) {
    const auto p = ju::join(prefix, "features");
    ju::allow_only(*it, p, {"ir_ar_coeff", "ir_noise_sd", "econ_switch_prob"});
    ju::read(*it, "ir_ar_coeff", p, cfg.features.ir_ar_coeff);
    ju::read(*it, "ir_noise_sd", p, cfg.features.ir_noise_sd);
    ju::read(*it, "econ_switch_prob", p, cfg.features.econ_switch_prob);
  }
  std::vector<double> prices = cfg.actions.prices();
  std::vector<double> orders = cfg.actions.orders();
  ju::read(j, "prices", prefix, prices);
  ju::read(j, "orders", prefix, orders);
  try {
    cfg.actions = ActionGrid(prices, orders);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ju::join(prefix, "prices"), e.what());
  }
  ju::read(j, "y_cap", prefix, cfg.y_cap);
  ju::read(j, "max_censor_run", prefix, cfg.max_censor_run);
  ju::read(j, "initial_inventory", prefix, cfg.initial_inventory);
  cfg.validate(prefix);
  return cfg;
}

std::string EnvConfig::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

double demand_from_shock(const DemandParams& params, const Features& x, double price, double d_prev,
                         double shock) {
  return std::clamp(params.mean(x, price, d_prev) + shock, 0.0, params.d_max);
}

double draw_demand(const DemandParams& params, const Features& x, double price, double d_prev, Rng& rng) {
  const double eps = params.noise_sd > 0.0 ? params.noise_sd * std_normal(rng) : 0.0;
  return demand_from_shock(params, x, price, d_prev, eps);
}

double draw_demand_below(const DemandParams& params, const Features& x, double price, double d_prev,
                         double ceiling, Rng& rng) {
  const double mu = params.mean(x, price, d_prev);
  const double cap = std::min(ceiling, params.d_max);
  if (cap <= 0.0) return 0.0;
  if (params.noise_sd <= 0.0) return std::clamp(mu, 0.0, cap);
  // Everything below zero is clamped to zero, so only the upper end of the law is restricted.
  const double upper = normal::cdf((cap - mu) / params.noise_sd);
  if (upper < 1e-300) return cap;
  const double u = std::max(uniform01(rng) * upper, 1e-300);
  return std::clamp(mu + params.noise_sd * normal::quantile(u), 0.0, cap);
}

double reward(const CostParams& costs, double price, double order, double y, double demand) {
  return price * std::min(y, demand) - costs.stockout * std::max(demand - y, 0.0) - costs.ordering * order -
         costs.holding * std::max(y - demand, 0.0);
}

Features next_features(const FeatureProcess& fp, const Features& x, Rng& rng) {
  const double bound = fp.ir_bound();
  const double shock = fp.ir_noise_sd > 0.0 ? fp.ir_noise_sd * std_normal(rng) : 0.0;
  double ir = fp.ir_ar_coeff * x[0] + shock;
  if (bound > 0.0) ir = std::clamp(ir, -bound, bound);
  const bool flip = uniform01(rng) < fp.econ_switch_prob;
  const double econ = flip ? 1.0 - x[1] : x[1];
  return {ir, econ};
}

Features initial_features(const FeatureProcess& fp, Rng& rng) {
  const double bound = fp.ir_bound();
  double ir = fp.ir_stationary_sd() > 0.0 ? fp.ir_stationary_sd() * std_normal(rng) : 0.0;
  if (bound > 0.0) ir = std::clamp(ir, -bound, bound);
  const double econ = uniform01(rng) < 0.5 ? 0.0 : 1.0;
  return {ir, econ};
}

UnderlyingState initial_state(const EnvConfig& cfg, Rng& rng) {
  UnderlyingState s;
  s.x = initial_features(cfg.features, rng);
  s.y = cfg.initial_inventory;
  // Lagged demand starts at the stationary level of the AR(1) at the median price.
  const auto& prices = cfg.actions.prices();
  const double p_mid = prices[prices.size() / 2];
  const auto& dp = cfg.demand;
  const double level = (dp.theta0 + dp.theta_x[1] * 0.5 - dp.beta * p_mid) / (1.0 - dp.rho);
  s.d_prev = std::clamp(level, 0.0, dp.d_max);
  return s;
}

StepOutcome step(const EnvConfig& cfg, const UnderlyingState& state, const Action& action, Rng& rng,
                 int censor_run) {
  StepOutcome out;
  double d = draw_demand(cfg.demand, state.x, action.price, state.d_prev, rng);
  if (cfg.truncates() && censor_run >= cfg.max_censor_run && d > state.y)
    d = draw_demand_below(cfg.demand, state.x, action.price, state.d_prev, state.y, rng);
  out.demand = d;
  out.sales = std::min(state.y, d);
  out.delta = state.y >= d;
  out.reward = reward(cfg.costs, action.price, action.order, state.y, d);
  out.next.x = next_features(cfg.features, state.x, rng);
  out.next.y = std::clamp(std::max(state.y - d, 0.0) + action.order, 0.0, cfg.y_cap);
  out.next.d_prev = d;
  return out;
}

Observation observe(const UnderlyingState& state, double z_prev, bool delta_prev) {
  return Observation{state.x, state.y, z_prev, delta_prev};
}

Episode::Episode(const EnvConfig& cfg, Rng& rng) : Episode(cfg, initial_state(cfg, rng)) {}

Episode::Episode(const EnvConfig& cfg, UnderlyingState start)
    : cfg_(&cfg), state_(start), z_prev_(start.d_prev) {}

StepOutcome Episode::advance(const Action& action, Rng& rng) {
  StepOutcome out = step(*cfg_, state_, action, rng, censor_run_);
  state_ = out.next;
  z_prev_ = out.sales;
  delta_prev_ = out.delta;
  censor_run_ = out.delta ? 0 : censor_run_ + 1;
  return out;
}

}  // namespace cfqi
