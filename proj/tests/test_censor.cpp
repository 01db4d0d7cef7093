#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cfqi/censor.hpp"
#include "cfqi/errors.hpp"

using namespace cfqi;

namespace {

Trajectory from_deltas(int id, const std::vector<int>& deltas) {
  Trajectory tr{id, {}};
  Observation w{{0.0, 0.0}, 10.0, 0.0, true};
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    ObservedTransition s;
    s.traj = id;
    s.t = static_cast<int>(t);
    s.w = w;
    s.a = {4.0, 5.0};
    s.delta = deltas[t] != 0;
    s.z = s.delta ? 6.0 : 10.0;
    if (s.delta) s.r_obs = 1.0;
    s.w_next = {{0.0, 0.0}, 10.0, s.z, s.delta};
    w = s.w_next;
    tr.steps.push_back(s);
  }
  return tr;
}

OfflineDataset dataset(const std::vector<std::vector<int>>& seqs) {
  OfflineDataset ds;
  ds.horizon = static_cast<int>(seqs.front().size()) + 1;
  for (std::size_t i = 0; i < seqs.size(); ++i) ds.trajectories.push_back(from_deltas(static_cast<int>(i), seqs[i]));
  return ds;
}

}  // namespace

TEST_CASE("longest censoring run") {
  CHECK(estimate_n_hat(dataset({{1, 1, 1, 1, 1}}), 5) == 0);
  CHECK(estimate_n_hat(dataset({{1, 0, 0, 1, 0}}), 5) == 2);
  CHECK(estimate_n_hat(dataset({{1, 0, 0, 1, 0}, {0, 0, 0, 1, 1}}), 5) == 3);
  CHECK(estimate_n_hat(dataset({{1, 0, 0, 0, 1}}), 2) == 2);
}

TEST_CASE("n_hat is monotone in the window and in the data") {
  const auto small = dataset({{1, 0, 1, 0, 0, 1, 0, 0, 0, 1}});
  const auto big = dataset({{1, 0, 1, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0, 0, 1, 1, 1, 1, 1, 1}});
  int prev = 0;
  for (int k = 1; k <= small.horizon; ++k) {
    const int n = estimate_n_hat(small, k);
    CHECK(n >= prev);
    CHECK(n <= k);
    CHECK(estimate_n_hat(big, k) >= n);
    prev = n;
  }
  CHECK(prev == 3);
  CHECK(estimate_n_hat(big, 10) == 4);
}

TEST_CASE("window schedule") {
  CHECK(default_window_k(5, 50, 0.9) == std::min(50, static_cast<int>(std::ceil(std::log(250.0) / 0.2))));
  CHECK(default_window_k(10, 100, 0.5) == static_cast<int>(std::ceil(std::log(1000.0))));
  CHECK_THROWS_AS(run_length_profile(dataset({{1, 1}}), 0), ConfigError);
}

TEST_CASE("partition by censoring depth") {
  const auto ds = dataset({{1, 0, 0, 1, 0}});
  const auto part = partition(ds, 2);
  REQUIRE(part.buckets.size() == 3);
  CHECK(part.buckets[0] == std::vector<BlockRef>{{0, 0, 0}, {0, 1, 0}, {0, 4, 0}});
  CHECK(part.buckets[1] == std::vector<BlockRef>{{0, 2, 1}});
  CHECK(part.buckets[2] == std::vector<BlockRef>{{0, 3, 2}});
  CHECK(part.discarded == 0);
  CHECK_THROWS_AS(partition(ds, 1), ConsistencyError);
}

TEST_CASE("partition counts add up on generated data") {
  const EnvConfig env;
  const auto ds = generate_dataset(env, BehaviorPolicy::uniform(env.actions), 8, 50, 3);
  const int n_hat = estimate_n_hat(ds, default_window_k(ds.n_traj(), ds.horizon, 0.9));
  const auto part = partition(ds, n_hat);
  CHECK(part.total() + part.discarded == ds.size());
  CHECK(n_hat <= env.max_censor_run);

  auto shuffled = ds;
  std::reverse(shuffled.trajectories.begin(), shuffled.trajectories.end());
  const auto part2 = partition(shuffled, n_hat);
  for (std::size_t i = 0; i < part.buckets.size(); ++i) CHECK(part.buckets[i].size() == part2.buckets[i].size());
}

TEST_CASE("uncensored data puts everything in bucket zero") {
  const auto part = partition(dataset({{1, 1, 1}, {1, 1, 1}}), 0);
  CHECK(part.buckets.size() == 1);
  CHECK(part.buckets[0].size() == 6);
}
