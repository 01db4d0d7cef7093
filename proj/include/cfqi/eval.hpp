#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "cfqi/policy.hpp"

namespace cfqi {

struct EvalReport {
  std::string algo;
  std::string mode;  // behavior scenario the policy was trained under
  int n_train_episodes = 0;
  std::uint64_t seed = 0;  // evaluation seed
  int n_episodes = 0;
  int horizon = 0;
  double gamma = 0.0;
  double mean_return = 0.0;
  double sd = 0.0;
  double ci_half = 0.0;           // 1.96 sd / sqrt(n)
  double truncation_bound = 0.0;  // gamma^H R_max / (1 - gamma)
  std::size_t amax_events = 0;       // a_max played beyond the supported depth
  std::size_t boundary_events = 0;   // a_max played at the supported depth
  std::string env_fingerprint;
  std::vector<double> returns;  // per episode
};

/// Mean discounted true return over n_episodes rollouts of `horizon` periods. Episode e uses the
/// streams derive_seed(seed, e, 0) for the environment and derive_seed(seed, e, 1) for the policy,
/// so policies evaluated with the same seed face the same demand shocks where their paths agree.
/// Throws CompatibilityError if the policy was built for a different environment.
EvalReport evaluate_policy(const Policy& policy, const EnvConfig& env, int n_episodes, int horizon, double gamma,
                           std::uint64_t seed);

struct RegretRow {
  std::string algo;
  std::string mode;
  int n_episodes = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double ci_half = 0.0;
  double regret = 0.0;
  double regret_ci_half = 0.0;
  std::size_t amax_events = 0;
};

/// regret = oracle mean - policy mean. When both were evaluated on the same episodes the CI uses
/// the paired differences; otherwise the half-widths are combined in quadrature.
std::vector<RegretRow> regret_table(const std::vector<EvalReport>& reports, const EvalReport& oracle);

/// Rows sorted by (mode, algo, n_episodes, seed); fixed-precision numbers.
void write_regret_csv(std::vector<RegretRow> rows, std::ostream& out);
std::vector<RegretRow> read_regret_csv(std::istream& in);
inline constexpr const char* kRegretCsvHeader = "algo,mode,n_episodes,seed,mean_return,ci_half,regret,regret_ci_half,amax_events";

}  // namespace cfqi
