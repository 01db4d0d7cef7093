#pragma once

#include <cstddef>
#include <vector>

#include "cfqi/data.hpp"

namespace cfqi {

/// Longest fully censored run per K-window start, maximised over trajectories.
struct RunLengthProfile {
  int window_k = 0;
  std::vector<int> per_window;  // index = window start
  int n_hat = 0;                // max over all windows and trajectories; 0 <= n_hat <= window_k
};

RunLengthProfile run_length_profile(const OfflineDataset& ds, int window_k);

/// n_hat_{K,b}: longest censoring run inside any length-K window of any trajectory.
int estimate_n_hat(const OfflineDataset& ds, int window_k);

/// min(T, ceil(ln(N T) / (2 (1 - gamma)))).
int default_window_k(std::size_t n_traj, int horizon, double gamma);

/// A transition at (trajectory, t) preceded by exactly `depth` censored periods; its history block
/// spans observations t - depth .. t.
struct BlockRef {
  std::size_t traj = 0;
  std::size_t t = 0;
  int depth = 0;
  friend bool operator==(const BlockRef&, const BlockRef&) = default;
};

struct DepthPartition {
  int n_hat = 0;
  std::vector<std::vector<BlockRef>> buckets;  // buckets[i] = O^(i), i = 0..n_hat
  std::size_t discarded = 0;                   // transitions without a full history block

  std::size_t total() const;
};

/// Split transitions by the number of consecutive censored periods immediately before them
/// (Delta_{-1} = 1 by convention). Throws ConsistencyError if some run exceeds n_hat.
DepthPartition partition(const OfflineDataset& ds, int n_hat);

}  // namespace cfqi
