#include "cfqi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <tuple>

#include "cfqi/errors.hpp"
#include "cfqi/fqi.hpp"
#include "cfqi/oracle.hpp"
#include "cfqi/survival.hpp"

namespace cfqi {

namespace {

std::string policy_fingerprint(const Policy& p) {
  if (const auto* a = dynamic_cast<const PolicyArtifact*>(&p)) return a->env().fingerprint();
  if (const auto* t = dynamic_cast<const TabularPolicy*>(&p)) return t->env().fingerprint();
  return {};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

EvalReport evaluate_policy(const Policy& policy, const EnvConfig& env, int n_episodes, int horizon, double gamma,
                           std::uint64_t seed) {
  if (n_episodes < 2) throw ConfigError("eval.episodes", "need at least 2 evaluation episodes for a CI");
  if (horizon < 1) throw ConfigError("eval.horizon", "must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("eval.gamma", "must lie in [0, 1)");
  const auto fp = policy_fingerprint(policy);
  if (!fp.empty() && fp != env.fingerprint())
    throw CompatibilityError("policy was built for environment " + fp + ", evaluating under " + env.fingerprint());

  EvalReport rep;
  rep.algo = policy.name();
  rep.seed = seed;
  rep.n_episodes = n_episodes;
  rep.horizon = horizon;
  rep.gamma = gamma;
  rep.env_fingerprint = env.fingerprint();
  rep.truncation_bound = std::pow(gamma, horizon) * r_max_bound(env) / (1.0 - gamma);
  rep.returns.reserve(static_cast<std::size_t>(n_episodes));

  std::vector<Observation> obs;
  std::vector<Action> acts;
  for (int e = 0; e < n_episodes; ++e) {
    Rng env_rng(derive_seed(seed, static_cast<std::uint64_t>(e), 0));
    Rng pol_rng(derive_seed(seed, static_cast<std::uint64_t>(e), 1));
    Episode ep(env, env_rng);
    obs.clear();
    acts.clear();
    double ret = 0.0;
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      obs.push_back(ep.observation());
      DecisionContext ctx{obs, acts, &ep.state(), ep.censor_run()};
      const Decision d = policy.decide(ctx, pol_rng);
      rep.amax_events += d.out_of_support ? 1 : 0;
      rep.boundary_events += (d.boundary && !d.out_of_support) ? 1 : 0;
      const Action a = env.actions.at(d.action);
      const auto out = ep.advance(a, env_rng);
      acts.push_back(a);
      ret += disc * out.reward;
      disc *= gamma;
    }
    rep.returns.push_back(ret);
  }
  double sum = 0.0;
  for (double r : rep.returns) sum += r;
  rep.mean_return = sum / n_episodes;
  double ss = 0.0;
  for (double r : rep.returns) ss += (r - rep.mean_return) * (r - rep.mean_return);
  rep.sd = std::sqrt(ss / (n_episodes - 1));
  rep.ci_half = 1.96 * rep.sd / std::sqrt(static_cast<double>(n_episodes));
  return rep;
}

std::vector<RegretRow> regret_table(const std::vector<EvalReport>& reports, const EvalReport& oracle) {
  std::vector<RegretRow> rows;
  for (const auto& r : reports) {
    if (r.env_fingerprint != oracle.env_fingerprint || r.horizon != oracle.horizon || r.gamma != oracle.gamma)
      throw CompatibilityError("report for " + r.algo + " does not share the oracle's environment and horizon");
    RegretRow row{r.algo, r.mode, r.n_train_episodes, r.seed, r.mean_return, r.ci_half,
                  oracle.mean_return - r.mean_return, 0.0, r.amax_events};
    if (r.seed == oracle.seed && r.returns.size() == oracle.returns.size() && r.returns.size() >= 2) {
      const std::size_t n = r.returns.size();
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += oracle.returns[i] - r.returns[i];
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = oracle.returns[i] - r.returns[i] - mean;
        ss += d * d;
      }
      row.regret_ci_half = 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
    } else {
      row.regret_ci_half = std::hypot(r.ci_half, oracle.ci_half);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_regret_csv(std::vector<RegretRow> rows, std::ostream& out) {
  std::sort(rows.begin(), rows.end(), [](const RegretRow& a, const RegretRow& b) {
    return std::tie(a.mode, a.algo, a.n_episodes, a.seed) < std::tie(b.mode, b.algo, b.n_episodes, b.seed);
  });
  out << kRegretCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.algo << ',' << r.mode << ',' << r.n_episodes << ',' << r.seed << ',' << fmt(r.mean_return) << ','
        << fmt(r.ci_half) << ',' << fmt(r.regret) << ',' << fmt(r.regret_ci_half) << ',' << r.amax_events << '\n';
}

std::vector<RegretRow> read_regret_csv(std::istream& in) {
  std::vector<RegretRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != kRegretCsvHeader) throw ParseError(lineno, "unexpected results header");
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw ParseError(lineno, "expected 9 columns");
    try {
      rows.push_back({f[0], f[1], std::stoi(f[2]), std::stoull(f[3]), std::stod(f[4]), std::stod(f[5]),
                      std::stod(f[6]), std::stod(f[7]), std::stoull(f[8])});
    } catch (const std::exception&) {
      throw ParseError(lineno, "non-numeric field");
    }
  }
  return rows;
}

}  // namespace cfqi
