#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "cfqi/env.hpp"

namespace cfqi {

/// Observations W_{t-i} .. W_t and actions A_{t-i} .. A_{t-1} of a depth-i history block.
struct HistoryBlock {
  std::span<const Observation> observations;
  std::span<const Action> actions;

  int depth() const { return static_cast<int>(observations.size()) - 1; }
};

class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual std::size_t dim(int depth) const = 0;
  /// Writes phi_depth(block, a) into `out` (length dim(depth)). Throws std::invalid_argument when the
  /// block does not have the stated depth.
  virtual void encode(const HistoryBlock& block, const Action& a, double* out) const = 0;
  /// Upper bound on ||phi|| at the given depth.
  virtual double norm_bound(int depth) const = 0;
  virtual std::string name() const = 0;

  Eigen::VectorXd operator()(const HistoryBlock& block, const Action& a) const;
};

/// Layout at depth i:
///   [1, ir, econ, y, z_prev, onehot(price), o, onehot(price) * z_prev]
/// followed by (ir, econ, y, z_prev, price, o) of each lagged (W_{t-j}, A_{t-j}), j = 1..i.
/// Continuous coordinates are scaled to [-1, 1] or [0, 1] by the environment bounds.
class StandardFeatureMap final : public FeatureMap {
 public:
  explicit StandardFeatureMap(const EnvConfig& env);

  std::size_t dim(int depth) const override;
  void encode(const HistoryBlock& block, const Action& a, double* out) const override;
  double norm_bound(int depth) const override;
  std::string name() const override { return "standard"; }

  static constexpr std::size_t kLagWidth = 6;

 private:
  std::vector<double> prices_;
  double ir_scale_;
  double y_scale_;
  double d_scale_;
  double o_scale_;
  double p_lo_;
  double p_span_;
};

}  // namespace cfqi
