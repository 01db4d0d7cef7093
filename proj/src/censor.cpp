#include "cfqi/censor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cfqi/errors.hpp"

namespace cfqi {

RunLengthProfile run_length_profile(const OfflineDataset& ds, int window_k) {
  if (ds.trajectories.empty() || ds.size() == 0) throw ConsistencyError("cannot estimate n_hat on an empty dataset");
  if (window_k < 1 || window_k > ds.horizon)
    throw ConfigError("window_k", "must satisfy 1 <= window_k <= T (T = " + std::to_string(ds.horizon) + ")");

  RunLengthProfile prof;
  prof.window_k = window_k;
  for (const auto& tr : ds.trajectories) {
    const int len = static_cast<int>(tr.steps.size());
    const int k = std::min(window_k, len);
    const int n_windows = len - k + 1;
    if (static_cast<int>(prof.per_window.size()) < n_windows) prof.per_window.resize(static_cast<std::size_t>(n_windows), 0);
    for (int start = 0; start < n_windows; ++start) {
      int best = 0;
      int run = 0;
      for (int t = start; t < start + k; ++t) {
        run = tr.steps[static_cast<std::size_t>(t)].delta ? 0 : run + 1;
        best = std::max(best, run);
      }
      auto& slot = prof.per_window[static_cast<std::size_t>(start)];
      slot = std::max(slot, best);
      prof.n_hat = std::max(prof.n_hat, best);
    }
  }
  return prof;
}

int estimate_n_hat(const OfflineDataset& ds, int window_k) { return run_length_profile(ds, window_k).n_hat; }

int default_window_k(std::size_t n_traj, int horizon, double gamma) {
  const double nt = static_cast<double>(n_traj) * static_cast<double>(horizon);
  const int k = static_cast<int>(std::ceil(std::log(std::max(nt, 1.0)) / (2.0 * (1.0 - gamma))));
  return std::clamp(k, 1, horizon);
}

std::size_t DepthPartition::total() const {
  std::size_t n = 0;
  for (const auto& b : buckets) n += b.size();
  return n;
}

DepthPartition partition(const OfflineDataset& ds, int n_hat) {
  if (n_hat < 0) throw ConsistencyError("n_hat must be >= 0");
  DepthPartition part;
  part.n_hat = n_hat;
  part.buckets.resize(static_cast<std::size_t>(n_hat) + 1);
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const auto& steps = ds.trajectories[j].steps;
    int depth = 0;  // Delta_{-1} = 1
    for (std::size_t t = 0; t < steps.size(); ++t) {
      if (t > 0) depth = steps[t - 1].delta ? 0 : depth + 1;
      if (steps[t].w.delta_prev != (depth == 0))
        throw ConsistencyError("trajectory " + std::to_string(j) + " t=" + std::to_string(t) +
                               ": observation censoring flag disagrees with the Delta sequence");
      // A block must start at an uncensored anchor inside the trajectory; with Delta_{-1} = 1
      // that always holds, so nothing is discarded unless the record itself says otherwise.
      if (static_cast<std::size_t>(depth) > t) {
        ++part.discarded;
        continue;
      }
      if (depth > n_hat)
        throw ConsistencyError("trajectory " + std::to_string(j) + " t=" + std::to_string(t) + " is preceded by " +
                               std::to_string(depth) + " censored periods but n_hat = " + std::to_string(n_hat));
      part.buckets[static_cast<std::size_t>(depth)].push_back({j, t, depth});
    }
  }
  return part;
}

}  // namespace cfqi
