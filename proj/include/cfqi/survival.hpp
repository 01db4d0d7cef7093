#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfqi/data.hpp"

namespace cfqi {

/// Right-continuous step estimate of S(c) = P(D > c).
///
/// S(c) = 1 for c < times[0] and S(c) = values[k] on [times[k], times[k+1]). Beyond the largest
/// observation the risk set is empty; if that observation was censored the curve is undefined there
/// and `operator()` holds the last value.
class SurvivalCurve {
 public:
  SurvivalCurve() = default;
  SurvivalCurve(std::vector<double> times, std::vector<double> values, double support_end, std::size_t n_events);

  double operator()(double c) const;
  /// True where the estimate is identified: before the risk set empties, or once S has reached 0.
  bool defined_at(double c) const;

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }
  double support_end() const { return support_end_; }
  std::size_t n_events() const { return n_events_; }
  bool empty() const { return n_events_ == 0; }

  /// Exact integral of the step function over [a, b].
  double integral(double a, double b) const;

 private:
  std::vector<double> times_;   // distinct event times, ascending
  std::vector<double> values_;  // S just after each event time
  double support_end_ = 0.0;    // largest observed time (event or censored)
  std::size_t n_events_ = 0;
};

/// Kaplan-Meier product-limit estimator. `events[i]` = 1 when times[i] is an exact demand
/// (Delta = 1) and 0 when the demand is right-censored at times[i]. Optional non-negative weights
/// give the weighted (Beran) form. Events are processed before censorings at tied times.
SurvivalCurve kaplan_meier(std::span<const double> times, std::span<const std::uint8_t> events,
                           std::span<const double> weights = {});

/// Floor below which S(y) counts as a degenerate tail.
inline constexpr double kTailFloor = 1e-6;

/// E[D | D > y] = y + int_y^{d_max} S(c) / S(y) dc, exact for the step curve.
/// Returns d_max when y >= d_max. Throws DegenerateTailError when S(y) <= kTailFloor or the
/// risk set at y is empty.
double conditional_mean_censored(const SurvivalCurve& curve, double y, double d_max);

enum class SurvivalKind { km_global, km_stratified, beran_kernel };

std::string to_string(SurvivalKind kind);
SurvivalKind survival_kind_from_string(const std::string& s);

struct ConditioningSpec {
  SurvivalKind kind = SurvivalKind::km_stratified;
  /// Also condition on the censoring depth and a coarse bin of the lagged sales.
  bool history_depth = false;
  /// Multiplies the rule-of-thumb bandwidth (Beran only).
  double bandwidth_scale = 1.0;
};

/// What the imputer conditions on for one transition.
struct SurvivalQuery {
  Features x{0.0, 0.0};
  double price = 0.0;
  double order = 0.0;
  int depth = 0;
  double z_prev = 0.0;
};

class SurvivalModel {
 public:
  /// Fits on the (Z_t, Delta_t) pairs of every transition.
  static SurvivalModel fit(const OfflineDataset& ds, const ConditioningSpec& spec, const ActionGrid& grid,
                           double d_max);

  /// Conditional curve for the query, or nullopt when the stratum has no events.
  std::optional<SurvivalCurve> conditional(const SurvivalQuery& q) const;
  const SurvivalCurve& global() const { return global_; }
  const ConditioningSpec& spec() const { return spec_; }
  double d_max() const { return d_max_; }
  std::size_t n_strata() const { return strata_.size(); }
  std::size_t n_unusable_strata() const;

 private:
  struct Sample {
    double time;
    std::uint8_t event;
    std::array<double, 6> cov;  // ir, econ, price, order, depth, z_prev
  };
  long stratum_key(const SurvivalQuery& q) const;
  std::array<double, 6> covariates(const SurvivalQuery& q) const;

  ConditioningSpec spec_;
  ActionGrid grid_;
  double d_max_ = 0.0;
  SurvivalCurve global_;
  std::map<long, SurvivalCurve> strata_;
  std::vector<Sample> samples_;  // sorted by time (Beran)
  std::array<double, 6> bandwidth_{};
  std::size_t n_cov_ = 4;
};

/// Sum of |reward| components at their worst: max p d_max + c1 d_max + c2 o_max + c3 y_cap.
double r_max_bound(const EnvConfig& env);

struct ImputeStats {
  std::size_t censored = 0;
  std::size_t global_fallbacks = 0;    // conditional tail degenerate, global curve used
  std::size_t midpoint_fallbacks = 0;  // global tail degenerate too, (y + d_max) / 2 used
};

/// Offline data with a complete reward record: r_star = r_obs when Delta = 1, else the surrogate.
struct AugmentedDataset {
  OfflineDataset data;
  std::vector<std::vector<double>> r_star;  // [trajectory][t]
  ImputeStats stats;

  double reward(std::size_t traj, std::size_t t) const { return r_star[traj][t]; }
};

/// p z - c1 (E[D | censored, history] - y) - c2 o for censored periods.
double surrogate_reward(const CostParams& costs, double price, double order, double y, double expected_demand);

AugmentedDataset impute(const OfflineDataset& ds, const SurvivalModel& model, const CostParams& costs);

/// Censoring depth of every transition (consecutive Delta = 0 immediately before t).
std::vector<std::vector<int>> transition_depths(const OfflineDataset& ds);

}  // namespace cfqi
