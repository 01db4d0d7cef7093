#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cfqi/errors.hpp"
#include "cfqi/survival.hpp"

using namespace cfqi;

namespace {

double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
double std_normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("Kaplan-Meier without censoring is the empirical survival function") {
  const std::vector<double> t{3.0, 5.0, 5.0};
  const std::vector<std::uint8_t> e{1, 1, 1};
  const auto s = kaplan_meier(t, e);
  CHECK(s(2.9) == 1.0);
  CHECK(s(3.0) == doctest::Approx(2.0 / 3.0));
  CHECK(s(4.0) == doctest::Approx(2.0 / 3.0));
  CHECK(s(5.0) == 0.0);
  CHECK(s.defined_at(100.0));

  std::mt19937_64 rng(3);
  std::vector<double> xs(500);
  for (auto& x : xs) x = std::round(std::uniform_real_distribution<double>(0.0, 20.0)(rng) * 4.0) / 4.0;
  const auto curve = kaplan_meier(xs, std::vector<std::uint8_t>(xs.size(), 1));
  for (double c = -1.0; c < 21.0; c += 0.125) {
    const double emp = static_cast<double>(std::count_if(xs.begin(), xs.end(), [&](double x) { return x > c; })) /
                       static_cast<double>(xs.size());
    CHECK(curve(c) == doctest::Approx(emp).epsilon(1e-12));
  }
}

TEST_CASE("single censored observation") {
  const std::vector<double> t{2.0};
  const std::vector<std::uint8_t> e{0};
  const auto s = kaplan_meier(t, e);
  CHECK(s(1.5) == 1.0);
  CHECK(s.defined_at(1.5));
  CHECK_FALSE(s.defined_at(2.5));
  CHECK(s.empty());
  CHECK_THROWS_AS(conditional_mean_censored(s, 2.0, 10.0), DegenerateTailError);
}

TEST_CASE("events precede censorings at tied times") {
  const std::vector<double> t{4.0, 4.0, 6.0};
  const std::vector<std::uint8_t> e{0, 1, 1};
  const auto s = kaplan_meier(t, e);
  CHECK(s(4.0) == doctest::Approx(2.0 / 3.0));
  CHECK(s(6.0) == 0.0);
}

TEST_CASE("weighted Kaplan-Meier with unit weights matches the plain estimator") {
  std::mt19937_64 rng(8);
  std::vector<double> t(200);
  std::vector<std::uint8_t> e(200);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = std::uniform_real_distribution<double>(0.0, 10.0)(rng);
    e[i] = rng() % 3 != 0;
  }
  const auto a = kaplan_meier(t, e);
  const auto b = kaplan_meier(t, e, std::vector<double>(t.size(), 2.5));
  for (double c = 0.0; c < 10.0; c += 0.1) CHECK(a(c) == doctest::Approx(b(c)));
}

TEST_CASE("Kaplan-Meier recovers a known law under random censoring") {
  std::mt19937_64 rng(21);
  std::exponential_distribution<double> demand(1.0 / 4.0);
  std::uniform_real_distribution<double> cens(0.0, 15.0);
  std::vector<double> t;
  std::vector<std::uint8_t> e;
  for (int i = 0; i < 10000; ++i) {
    const double d = demand(rng);
    const double y = cens(rng);
    t.push_back(std::min(d, y));
    e.push_back(d <= y ? 1 : 0);
  }
  const auto s = kaplan_meier(t, e);
  double sup = 0.0;
  for (double c = 0.0; c <= 10.0; c += 0.01) sup = std::max(sup, std::abs(s(c) - std::exp(-c / 4.0)));
  CHECK(sup <= 0.03);
}

TEST_CASE("conditional mean of censored demand") {
  std::mt19937_64 rng(4);
  std::vector<double> u(10000);
  for (auto& x : u) x = std::uniform_real_distribution<double>(0.0, 10.0)(rng);
  const auto su = kaplan_meier(u, std::vector<std::uint8_t>(u.size(), 1));
  CHECK(std::abs(conditional_mean_censored(su, 6.0, 10.0) - 8.0) <= 0.1);
  CHECK(conditional_mean_censored(su, 10.0, 10.0) == 10.0);
  CHECK(conditional_mean_censored(su, 12.0, 10.0) == 10.0);

  std::normal_distribution<double> n(5.0, 1.0);
  std::vector<double> v(10000);
  for (auto& x : v) x = std::clamp(n(rng), 0.0, 25.0);
  const auto sn = kaplan_meier(v, std::vector<std::uint8_t>(v.size(), 1));
  const double oracle = 5.0 + std_normal_pdf(0.0) / std_normal_sf(0.0);
  CHECK(oracle == doctest::Approx(5.7979).epsilon(1e-4));
  CHECK(std::abs(conditional_mean_censored(sn, 5.0, 25.0) - oracle) <= 0.1);
}

TEST_CASE("exact step integral") {
  const std::vector<double> t{1.0, 2.0, 4.0};
  const std::vector<std::uint8_t> e{1, 1, 1};
  const auto s = kaplan_meier(t, e);
  CHECK(s.integral(0.0, 5.0) == doctest::Approx(1.0 + 2.0 / 3.0 + 2.0 / 3.0));
  CHECK(s.integral(1.5, 3.0) == doctest::Approx(0.5 * 2.0 / 3.0 + 1.0 / 3.0));
  CHECK(conditional_mean_censored(s, 1.0, 10.0) == doctest::Approx((2.0 + 4.0) / 2.0));
}

TEST_CASE("surrogate reward arithmetic") {
  const CostParams c{2.0, 3.0, 1.0};
  CHECK(surrogate_reward(c, 4.0, 3.0, 5.0, 8.0) == doctest::Approx(5.0));
  CHECK(surrogate_reward(c, 4.0, 0.0, 5.0, 5.0) == doctest::Approx(reward(c, 4.0, 0.0, 5.0, 5.0)));
}

TEST_CASE("reward bound") {
  const EnvConfig env;
  CHECK(r_max_bound(env) == doctest::Approx(232.5));

  EnvConfig zero = env;
  zero.costs = {0.0, 0.0, 0.0};
  zero.actions = ActionGrid({0.0}, {0.0});
  CHECK(r_max_bound(zero) == 0.0);

  Rng rng(17);
  const double bound = r_max_bound(env);
  Episode ep(env, rng);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    if (i % 50 == 0) ep = Episode(env, rng);
    const auto out = ep.advance(env.actions.at(rng() % env.actions.size()), rng);
    worst = std::max(worst, std::abs(out.reward));
  }
  CHECK(worst <= bound);
}

TEST_CASE("surrogate with the true conditional mean is unbiased") {
  const CostParams c{2.0, 3.0, 1.0};
  std::mt19937_64 rng(99);
  const double mu = 10.0, sd = 3.0;
  double sum = 0.0, sum2 = 0.0;
  int n = 0;
  while (n < 20000) {
    const double y = std::uniform_real_distribution<double>(5.0, 12.0)(rng);
    const double d = mu + sd * std::normal_distribution<double>()(rng);
    if (d <= y) continue;
    const double a = (y - mu) / sd;
    const double cond = mu + sd * std_normal_pdf(a) / std_normal_sf(a);
    const double diff = reward(c, 4.0, 3.0, y, d) - surrogate_reward(c, 4.0, 3.0, y, cond);
    sum += diff;
    sum2 += diff * diff;
    ++n;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("imputation keeps observed rewards and fills censored ones") {
  const EnvConfig env;
  const auto ds = generate_dataset(env, BehaviorPolicy::uniform(env.actions), 10, 50, 2);
  for (auto kind : {SurvivalKind::km_global, SurvivalKind::km_stratified, SurvivalKind::beran_kernel}) {
    ConditioningSpec spec;
    spec.kind = kind;
    const auto model = SurvivalModel::fit(ds, spec, env.actions, env.demand.d_max);
    const auto aug = impute(ds, model, env.costs);
    std::size_t censored = 0;
    for (std::size_t j = 0; j < ds.n_traj(); ++j) {
      for (std::size_t t = 0; t < ds.trajectories[j].steps.size(); ++t) {
        const auto& s = ds.trajectories[j].steps[t];
        if (s.delta) {
          CHECK(aug.reward(j, t) == *s.r_obs);
        } else {
          ++censored;
          const double stocked = surrogate_reward(env.costs, s.a.price, s.a.order, s.w.y, s.w.y);
          CHECK(aug.reward(j, t) <= stocked + 1e-9);
          CHECK(aug.reward(j, t) >= surrogate_reward(env.costs, s.a.price, s.a.order, s.w.y, env.demand.d_max) - 1e-9);
        }
      }
    }
    CHECK(aug.stats.censored == censored);
  }
}

TEST_CASE("degenerate tails fall back to the global curve and then the midpoint") {
  OfflineDataset ds;
  ds.horizon = 3;
  Observation w{{0.0, 0.0}, 20.0, 0.0, true};
  Trajectory tr{0, {}};
  ObservedTransition a;
  a.w = w;
  a.a = {4.0, 0.0};
  a.delta = true;
  a.z = 3.0;
  a.r_obs = reward(CostParams{}, 4.0, 0.0, 20.0, 3.0);
  a.w_next = {{0.0, 0.0}, 17.0, 3.0, true};
  ObservedTransition b;
  b.t = 1;
  b.w = a.w_next;
  b.a = {4.5, 0.0};
  b.delta = false;
  b.z = 17.0;
  b.w_next = {{0.0, 0.0}, 0.0, 17.0, false};
  tr.steps = {a, b};
  ds.trajectories.push_back(tr);

  const EnvConfig env;
  const auto model = SurvivalModel::fit(ds, ConditioningSpec{}, env.actions, env.demand.d_max);
  const auto aug = impute(ds, model, env.costs);
  CHECK(aug.stats.censored == 1);
  CHECK(aug.stats.midpoint_fallbacks == 1);
  CHECK(aug.reward(0, 1) == doctest::Approx(surrogate_reward(env.costs, 4.5, 0.0, 17.0, (17.0 + 25.0) / 2.0)));
}

TEST_CASE("survival kind names") {
  for (auto k : {SurvivalKind::km_global, SurvivalKind::km_stratified, SurvivalKind::beran_kernel})
    CHECK(survival_kind_from_string(to_string(k)) == k);
  CHECK_THROWS(survival_kind_from_string("cox"));
}
