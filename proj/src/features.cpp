#include "cfqi/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cfqi {

Eigen::VectorXd FeatureMap::operator()(const HistoryBlock& block, const Action& a) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim(block.depth())));
  encode(block, a, v.data());
  return v;
}

StandardFeatureMap::StandardFeatureMap(const EnvConfig& env)
    : prices_(env.actions.prices()),
      ir_scale_(env.features.ir_bound() > 0.0 ? env.features.ir_bound() : 1.0),
      y_scale_(env.y_cap),
      d_scale_(env.demand.d_max),
      o_scale_(env.actions.max_order() > 0.0 ? env.actions.max_order() : 1.0),
      p_lo_(env.actions.prices().front()),
      p_span_(env.actions.max_price() - env.actions.prices().front()) {}

std::size_t StandardFeatureMap::dim(int depth) const {
  return 5 + 2 * prices_.size() + 1 + kLagWidth * static_cast<std::size_t>(std::max(depth, 0));
}

double StandardFeatureMap::norm_bound(int depth) const { return std::sqrt(static_cast<double>(dim(depth))); }

void StandardFeatureMap::encode(const HistoryBlock& block, const Action& a, double* out) const {
  const int depth = block.depth();
  if (depth < 0 || block.actions.size() != static_cast<std::size_t>(depth))
    throw std::invalid_argument("history block has " + std::to_string(block.observations.size()) +
                                " observations and " + std::to_string(block.actions.size()) + " actions");
  const auto& w = block.observations.back();
  const double z = w.z_prev / d_scale_;
  std::size_t k = 0;
  out[k++] = 1.0;
  out[k++] = w.x[0] / ir_scale_;
  out[k++] = w.x[1];
  out[k++] = w.y / y_scale_;
  out[k++] = z;
  const std::size_t np = prices_.size();
  for (std::size_t i = 0; i < np; ++i) out[k + i] = prices_[i] == a.price ? 1.0 : 0.0;
  out[k + np] = a.order / o_scale_;
  for (std::size_t i = 0; i < np; ++i) out[k + np + 1 + i] = out[k + i] * z;
  k += 2 * np + 1;
  for (int j = 1; j <= depth; ++j) {
    const auto& lw = block.observations[static_cast<std::size_t>(depth - j)];
    const auto& la = block.actions[static_cast<std::size_t>(depth - j)];
    out[k++] = lw.x[0] / ir_scale_;
    out[k++] = lw.x[1];
    out[k++] = lw.y / y_scale_;
    out[k++] = lw.z_prev / d_scale_;
    out[k++] = p_span_ > 0.0 ? (la.price - p_lo_) / p_span_ : 0.0;
    out[k++] = la.order / o_scale_;
  }
}

}  // namespace cfqi
