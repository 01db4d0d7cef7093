#include "cfqi/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cfqi/errors.hpp"

namespace cfqi {

SurvivalCurve::SurvivalCurve(std::vector<double> times, std::vector<double> values, double support_end,
                             std::size_t n_events)
    : times_(std::move(times)), values_(std::move(values)), support_end_(support_end), n_events_(n_events) {}

double SurvivalCurve::operator()(double c) const {
  const auto k = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), c) - times_.begin());
  return k == 0 ? 1.0 : values_[k - 1];
}

bool SurvivalCurve::defined_at(double c) const {
  return c < support_end_ || (!values_.empty() && values_.back() == 0.0);
}

double SurvivalCurve::integral(double a, double b) const {
  if (!(b > a)) return 0.0;
  double total = 0.0;
  double left = a;
  double level = (*this)(a);
  auto it = std::upper_bound(times_.begin(), times_.end(), a);
  for (; it != times_.end() && *it < b; ++it) {
    total += level * (*it - left);
    left = *it;
    level = values_[static_cast<std::size_t>(it - times_.begin())];
  }
  total += level * (b - left);
  return total;
}

SurvivalCurve kaplan_meier(std::span<const double> times, std::span<const std::uint8_t> events,
                           std::span<const double> weights) {
  if (times.size() != events.size() || (!weights.empty() && weights.size() != times.size()))
    throw std::invalid_argument("kaplan_meier: input spans differ in length");
  const std::size_t n = times.size();
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  std::vector<std::size_t> idx;
  idx.reserve(n);
  double at_risk = 0.0;
  double support_end = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(w(i) > 0.0)) continue;
    idx.push_back(i);
    at_risk += w(i);
    support_end = std::max(support_end, times[i]);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (times[a] != times[b]) return times[a] < times[b];
    return events[a] > events[b];
  });

  std::vector<double> out_t;
  std::vector<double> out_s;
  std::size_t n_events = 0;
  const double total = at_risk;
  bool censored_seen = false;
  double s = 1.0;
  for (std::size_t k = 0; k < idx.size();) {
    const double t = times[idx[k]];
    double dead = 0.0;
    double gone = 0.0;
    for (; k < idx.size() && times[idx[k]] == t; ++k) {
      const double wk = w(idx[k]);
      if (events[idx[k]]) {
        dead += wk;
        ++n_events;
      }
      gone += wk;
    }
    if (dead > 0.0 && at_risk > 0.0) {
      // before any censoring the product telescopes to the empirical survival
      s = censored_seen ? s * std::max(0.0, 1.0 - dead / at_risk) : std::max(0.0, at_risk - dead) / total;
      out_t.push_back(t);
      out_s.push_back(s);
    }
    censored_seen = censored_seen || gone > dead;
    at_risk -= gone;
  }
  return SurvivalCurve(std::move(out_t), std::move(out_s), support_end, n_events);
}

double conditional_mean_censored(const SurvivalCurve& curve, double y, double d_max) {
  if (y >= d_max) return d_max;
  const double s_y = curve(y);
  if (s_y <= kTailFloor) throw DegenerateTailError("survival at the censoring point is below the floor");
  if (!curve.defined_at(y)) throw DegenerateTailError("risk set is empty at the censoring point");
  const double mean = y + curve.integral(y, d_max) / s_y;
  return std::clamp(mean, y, d_max);
}

std::string to_string(SurvivalKind kind) {
  switch (kind) {
    case SurvivalKind::km_global: return "km_global";
    case SurvivalKind::km_stratified: return "km_stratified";
    case SurvivalKind::beran_kernel: return "beran_kernel";
  }
  return "?";
}

SurvivalKind survival_kind_from_string(const std::string& s) {
  if (s == "km_global") return SurvivalKind::km_global;
  if (s == "km_stratified") return SurvivalKind::km_stratified;
  if (s == "beran_kernel") return SurvivalKind::beran_kernel;
  throw std::invalid_argument("unknown survival model '" + s + "'");
}

std::vector<std::vector<int>> transition_depths(const OfflineDataset& ds) {
  std::vector<std::vector<int>> out(ds.trajectories.size());
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const auto& steps = ds.trajectories[j].steps;
    out[j].resize(steps.size());
    int depth = 0;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      if (t > 0) depth = steps[t - 1].delta ? 0 : depth + 1;
      out[j][t] = depth;
    }
  }
  return out;
}

long SurvivalModel::stratum_key(const SurvivalQuery& q) const {
  const long pi = static_cast<long>(grid_.price_index_of(q.price));
  const long econ = q.x[1] > 0.5 ? 1 : 0;
  long key = pi * 2 + econ;
  if (spec_.history_depth) {
    const long depth = std::min(q.depth, 7);
    const long zbin = std::clamp(static_cast<long>(3.0 * q.z_prev / d_max_), 0L, 2L);
    key = (key * 8 + depth) * 3 + zbin;
  }
  return key;
}

std::array<double, 6> SurvivalModel::covariates(const SurvivalQuery& q) const {
  return {q.x[0], q.x[1], q.price, q.order, static_cast<double>(q.depth), q.z_prev};
}

SurvivalModel SurvivalModel::fit(const OfflineDataset& ds, const ConditioningSpec& spec, const ActionGrid& grid,
                                 double d_max) {
  if (ds.size() == 0) throw std::invalid_argument("cannot fit a survival model on an empty dataset");
  SurvivalModel m;
  m.spec_ = spec;
  m.grid_ = grid;
  m.d_max_ = d_max;
  m.n_cov_ = spec.history_depth ? 6 : 4;

  const auto depths = transition_depths(ds);
  std::vector<SurvivalQuery> queries;
  std::vector<double> times;
  std::vector<std::uint8_t> events;
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    for (std::size_t t = 0; t < ds.trajectories[j].steps.size(); ++t) {
      const auto& s = ds.trajectories[j].steps[t];
      queries.push_back({s.w.x, s.a.price, s.a.order, depths[j][t], s.w.z_prev});
      times.push_back(s.z);
      events.push_back(s.delta ? 1 : 0);
    }
  }
  m.global_ = kaplan_meier(times, events);

  if (spec.kind == SurvivalKind::km_stratified) {
    std::map<long, std::pair<std::vector<double>, std::vector<std::uint8_t>>> cells;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      auto& cell = cells[m.stratum_key(queries[i])];
      cell.first.push_back(times[i]);
      cell.second.push_back(events[i]);
    }
    for (auto& [key, cell] : cells) m.strata_[key] = kaplan_meier(cell.first, cell.second);
  } else if (spec.kind == SurvivalKind::beran_kernel) {
    m.samples_.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) m.samples_.push_back({times[i], events[i], m.covariates(queries[i])});
    const double n = static_cast<double>(m.samples_.size());
    for (std::size_t c = 0; c < m.n_cov_; ++c) {
      double mean = 0.0;
      for (const auto& s : m.samples_) mean += s.cov[c];
      mean /= n;
      double var = 0.0;
      for (const auto& s : m.samples_) var += (s.cov[c] - mean) * (s.cov[c] - mean);
      const double sd = std::sqrt(var / std::max(n - 1.0, 1.0));
      // Silverman's rule of thumb; constant covariates carry no information.
      m.bandwidth_[c] = sd > 0.0 ? spec.bandwidth_scale * 1.06 * sd * std::pow(n, -0.2) : 0.0;
    }
  }
  return m;
}

std::optional<SurvivalCurve> SurvivalModel::conditional(const SurvivalQuery& q) const {
  switch (spec_.kind) {
    case SurvivalKind::km_global:
      return global_;
    case SurvivalKind::km_stratified: {
      auto it = strata_.find(stratum_key(q));
      if (it == strata_.end() || it->second.empty()) return std::nullopt;
      return it->second;
    }
    case SurvivalKind::beran_kernel: {
      const auto cov = covariates(q);
      std::vector<double> times(samples_.size());
      std::vector<std::uint8_t> events(samples_.size());
      std::vector<double> weights(samples_.size());
      for (std::size_t i = 0; i < samples_.size(); ++i) {
        double log_w = 0.0;
        for (std::size_t c = 0; c < n_cov_; ++c) {
          if (bandwidth_[c] <= 0.0) continue;
          const double u = (samples_[i].cov[c] - cov[c]) / bandwidth_[c];
          log_w -= 0.5 * u * u;
        }
        times[i] = samples_[i].time;
        events[i] = samples_[i].event;
        weights[i] = std::exp(log_w);
      }
      auto curve = kaplan_meier(times, events, weights);
      if (curve.empty()) return std::nullopt;
      return curve;
    }
  }
  return std::nullopt;
}

std::size_t SurvivalModel::n_unusable_strata() const {
  std::size_t n = 0;
  for (const auto& [key, curve] : strata_) n += curve.empty() ? 1 : 0;
  return n;
}

double r_max_bound(const EnvConfig& env) {
  const double d_max = env.demand.d_max;
  double revenue = 0.0;
  for (double p : env.actions.prices()) revenue = std::max(revenue, std::abs(p * d_max));
  return revenue + env.costs.stockout * d_max + env.costs.ordering * env.actions.max_order() +
         env.costs.holding * env.y_cap;
}

double surrogate_reward(const CostParams& costs, double price, double order, double y, double expected_demand) {
  return price * y - costs.stockout * (expected_demand - y) - costs.ordering * order;
}

AugmentedDataset impute(const OfflineDataset& ds, const SurvivalModel& model, const CostParams& costs) {
  AugmentedDataset aug;
  aug.data = ds;
  aug.r_star.resize(ds.trajectories.size());
  const auto depths = transition_depths(ds);
  const double d_max = model.d_max();
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const auto& steps = ds.trajectories[j].steps;
    aug.r_star[j].resize(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const auto& s = steps[t];
      if (s.delta) {
        aug.r_star[j][t] = *s.r_obs;
        continue;
      }
      ++aug.stats.censored;
      const SurvivalQuery q{s.w.x, s.a.price, s.a.order, depths[j][t], s.w.z_prev};
      double expected = 0.0;
      bool done = false;
      if (auto curve = model.conditional(q)) {
        try {
          expected = conditional_mean_censored(*curve, s.w.y, d_max);
          done = true;
        } catch (const DegenerateTailError&) {
        }
      }
      if (!done) {
        try {
          expected = conditional_mean_censored(model.global(), s.w.y, d_max);
          ++aug.stats.global_fallbacks;
          done = true;
        } catch (const DegenerateTailError&) {
        }
      }
      if (!done) {
        expected = 0.5 * (s.w.y + d_max);
        ++aug.stats.midpoint_fallbacks;
      }
      aug.r_star[j][t] = surrogate_reward(costs, s.a.price, s.a.order, s.w.y, expected);
    }
  }
  return aug;
}

}  // namespace cfqi
