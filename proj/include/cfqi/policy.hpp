#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfqi/env.hpp"

namespace cfqi {

/// What a policy may look at when acting at period t.
struct DecisionContext {
  std::span<const Observation> observations;  // W_0 .. W_t, current observation last
  std::span<const Action> actions;            // A_0 .. A_{t-1}
  /// Privileged underlying state; only full-information (oracle) policies read it.
  const UnderlyingState* truth = nullptr;
  int true_censor_run = 0;
};

struct Decision {
  std::size_t action = 0;  // index into the ActionGrid
  bool boundary = false;   // safe action emitted because the censoring run reached the cap
  bool out_of_support = false;
};

/// Number of consecutive censored periods immediately preceding the current one.
int censoring_depth(std::span<const Observation> observations);

class Policy {
 public:
  virtual ~Policy() = default;
  virtual Decision decide(const DecisionContext& ctx, Rng& rng) const = 0;
  /// Action distribution over the grid; deterministic policies return a point mass.
  virtual std::vector<double> probabilities(const DecisionContext& ctx) const = 0;
  virtual std::string name() const = 0;
  virtual bool needs_truth() const { return false; }
};

class UniformPolicy final : public Policy {
 public:
  explicit UniformPolicy(ActionGrid grid) : grid_(std::move(grid)) {}
  Decision decide(const DecisionContext&, Rng& rng) const override;
  std::vector<double> probabilities(const DecisionContext&) const override;
  std::string name() const override { return "uniform"; }

 private:
  ActionGrid grid_;
};

/// With probability epsilon plays the safe action (max price, max order), otherwise uniform.
class EpsilonSafePolicy final : public Policy {
 public:
  EpsilonSafePolicy(ActionGrid grid, double epsilon);
  Decision decide(const DecisionContext&, Rng& rng) const override;
  std::vector<double> probabilities(const DecisionContext&) const override;
  std::string name() const override { return "epsilon_safe"; }

 private:
  ActionGrid grid_;
  double epsilon_;
};

enum class BehaviorKind { uniform, epsilon_safe, plugin_optimal };

std::string to_string(BehaviorKind kind);
BehaviorKind behavior_kind_from_string(const std::string& s);

struct BehaviorPolicy {
  BehaviorKind kind = BehaviorKind::uniform;
  double epsilon = 0.0;
  std::shared_ptr<const Policy> impl;

  static BehaviorPolicy uniform(const ActionGrid& grid);
  static BehaviorPolicy epsilon_safe(const ActionGrid& grid, double epsilon);
};

}  // namespace cfqi
