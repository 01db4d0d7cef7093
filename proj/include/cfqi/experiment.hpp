#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <ostream>
#include <string>
#include <vector>

#include "cfqi/data.hpp"
#include "cfqi/eval.hpp"
#include "cfqi/fqi.hpp"
#include "cfqi/oracle.hpp"
#include "cfqi/survival.hpp"

namespace cfqi {

inline constexpr const char* kLibraryVersion = "1.0.0";

/// A pipeline stage (generate, impute, train, evaluate, oracle) failed; what() keeps the cause verbatim.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error("stage " + stage + " failed: " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct DataSettings {
  BehaviorKind behavior = BehaviorKind::uniform;
  double epsilon = 0.2;  // epsilon_safe only
  std::vector<int> episodes{5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
  int horizon = 50;
  int replicates = 10;
  std::uint64_t base_seed = 20240601;
};

struct EvalSettings {
  int episodes = 200;
  int horizon = 50;
  double gamma = 0.9;
  std::uint64_t seed = 777;
};

struct ExperimentConfig {
  EnvConfig env;
  DataSettings data;
  ConditioningSpec survival;
  FqiConfig algo;  // algo.gamma mirrors eval.gamma
  std::vector<FqiMode> algorithms{FqiMode::cfqi, FqiMode::pcfqi, FqiMode::fusion};
  EvalSettings eval;
  DpConfig oracle;
  std::filesystem::path out_dir = "results";

  /// Throws ConfigError with the dotted path of the first invalid field.
  void validate() const;
  json to_json() const;
  static ExperimentConfig from_json(const json& j);
  /// Digest of everything that determines a cell's numbers (not the ladder, replicate count,
  /// algorithm list or output location).
  std::string hash() const;
  std::uint64_t replicate_seed(int replicate) const;
};

/// Reads a JSON config file; throws ConfigError (field path) or ParseError (syntax).
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

BehaviorPolicy make_behavior(const ExperimentConfig& cfg, const std::shared_ptr<const Policy>& optimal);

/// Whether (max price, max order) keeps the noiseless demand at the most demand-raising covariates
/// and the largest lagged demand within the inventory cap.
bool amax_clears_cap(const EnvConfig& env);

struct ReferencePolicies {
  DpResult censored;
  DpResult oracle;
  EvalReport censored_report;
  EvalReport oracle_report;
};

/// Solves both DPs and evaluates them with the experiment's evaluation settings.
ReferencePolicies solve_references(const ExperimentConfig& cfg);

struct ExperimentSummary {
  std::size_t cells_run = 0;
  std::size_t cells_cached = 0;
  std::vector<RegretRow> rows;
  std::filesystem::path results_csv;
};

/// The full ladder: for every episode count, replicate and algorithm generate, impute, train and
/// evaluate; cells already present under out_dir/cells/<hash>/ are reused. Writes results.csv
/// (sorted), reference.csv and manifest.json into out_dir.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Number of worker threads: hardware concurrency capped by CFQI_THREADS.
unsigned worker_threads();

}  // namespace cfqi
