#include "cfqi/policy.hpp"

#include <stdexcept>

namespace cfqi {

int censoring_depth(std::span<const Observation> observations) {
  int depth = 0;
  for (auto it = observations.rbegin(); it != observations.rend() && !it->delta_prev; ++it) ++depth;
  return depth;
}

Decision UniformPolicy::decide(const DecisionContext&, Rng& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, grid_.size() - 1);
  return {pick(rng), false, false};
}

std::vector<double> UniformPolicy::probabilities(const DecisionContext&) const {
  return std::vector<double>(grid_.size(), 1.0 / static_cast<double>(grid_.size()));
}

EpsilonSafePolicy::EpsilonSafePolicy(ActionGrid grid, double epsilon) : grid_(std::move(grid)), epsilon_(epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
}

Decision EpsilonSafePolicy::decide(const DecisionContext&, Rng& rng) const {
  if (uniform01(rng) < epsilon_) return {grid_.max_action_index(), false, false};
  std::uniform_int_distribution<std::size_t> pick(0, grid_.size() - 1);
  return {pick(rng), false, false};
}

std::vector<double> EpsilonSafePolicy::probabilities(const DecisionContext&) const {
  std::vector<double> p(grid_.size(), (1.0 - epsilon_) / static_cast<double>(grid_.size()));
  p[grid_.max_action_index()] += epsilon_;
  return p;
}

std::string to_string(BehaviorKind kind) {
  switch (kind) {
    case BehaviorKind::uniform: return "uniform";
    case BehaviorKind::epsilon_safe: return "epsilon_safe";
    case BehaviorKind::plugin_optimal: return "optimal";
  }
  return "?";
}

BehaviorKind behavior_kind_from_string(const std::string& s) {
  if (s == "uniform") return BehaviorKind::uniform;
  if (s == "epsilon_safe") return BehaviorKind::epsilon_safe;
  if (s == "optimal" || s == "plugin_optimal") return BehaviorKind::plugin_optimal;
  throw std::invalid_argument("unknown behavior policy '" + s + "'");
}

BehaviorPolicy BehaviorPolicy::uniform(const ActionGrid& grid) {
  return {BehaviorKind::uniform, 0.0, std::make_shared<UniformPolicy>(grid)};
}

BehaviorPolicy BehaviorPolicy::epsilon_safe(const ActionGrid& grid, double epsilon) {
  return {BehaviorKind::epsilon_safe, epsilon, std::make_shared<EpsilonSafePolicy>(grid, epsilon)};
}

}  // namespace cfqi
