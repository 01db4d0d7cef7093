#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfqi/censor.hpp"
#include "cfqi/features.hpp"
#include "cfqi/policy.hpp"
#include "cfqi/regression.hpp"
#include "cfqi/survival.hpp"

namespace cfqi {

enum class FqiMode { cfqi, pcfqi, fusion };
enum class FunctionClass { ridge, krr };

std::string to_string(FqiMode mode);
FqiMode fqi_mode_from_string(const std::string& s);

struct FqiConfig {
  int iterations = 10;  // K
  double gamma = 0.9;
  FqiMode mode = FqiMode::cfqi;
  FunctionClass function_class = FunctionClass::krr;
  double beta = 1.0;    // uncertainty multiplier, same for every iteration
  double lambda = 1.0;  // ridge penalty
  std::vector<double> lambda_grid{0.1, 1.0, 10.0};
  std::vector<KernelSpec> kernels{KernelSpec{KernelKind::linear}, KernelSpec{KernelKind::polynomial, 2, 1.0}};
  int cv_folds = 5;
  int switch_point = 4;  // fusion: pessimistic backups for the first switch_point iterations
  int window_k = 0;      // 0 selects the default schedule

  void validate(const std::string& prefix = "algo") const;
  json to_json() const;
  static FqiConfig from_json(const json& j, const std::string& prefix = "algo");

  bool pessimistic_at(int iteration) const {
    return mode == FqiMode::pcfqi || (mode == FqiMode::fusion && iteration < switch_point);
  }
};

/// Fitted Q^(0) .. Q^(n_hat).
struct QEnsemble {
  FqiMode mode = FqiMode::cfqi;
  double gamma = 0.9;
  int iterations = 0;
  double beta = 0.0;
  double v_max = 0.0;  // R_max / (1 - gamma)
  std::vector<KernelRidgeModel> models;

  int n_hat() const { return static_cast<int>(models.size()) - 1; }
};

/// Deployable greedy policy over the ensemble. At depth < n_hat it maximises Q^(depth) (or the
/// pessimistic Q - U) with ties broken towards the lowest action index, i.e. lowest price then
/// lowest order. At depth n_hat >= 1 it plays a_max; beyond n_hat it plays a_max and flags the
/// decision as out of support.
class PolicyArtifact final : public Policy {
 public:
  PolicyArtifact(EnvConfig env, QEnsemble ensemble, bool pessimistic,
                 std::shared_ptr<const FeatureMap> features = nullptr);

  Decision decide(const DecisionContext& ctx, Rng& rng) const override;
  std::vector<double> probabilities(const DecisionContext& ctx) const override;
  std::string name() const override { return to_string(ensemble_.mode); }

  Decision act(std::span<const Observation> observations, std::span<const Action> actions) const;
  /// Value used by the greedy rule for every action of the grid at this block.
  std::vector<double> action_values(const HistoryBlock& block) const;

  const QEnsemble& ensemble() const { return ensemble_; }
  const EnvConfig& env() const { return env_; }
  const FeatureMap& features() const { return *features_; }
  bool pessimistic() const { return pessimistic_; }
  int n_hat() const { return ensemble_.n_hat(); }

  json to_json() const;
  /// 16-hex digest of the serialised artifact.
  std::string summary_hash() const;

 private:
  EnvConfig env_;
  QEnsemble ensemble_;
  bool pessimistic_;
  std::shared_ptr<const FeatureMap> features_;
};

void save_policy(const PolicyArtifact& artifact, const std::filesystem::path& path);
/// Throws ParseError on a malformed file and CompatibilityError when `expected_env` is given and
/// differs from the environment the artifact was trained under.
PolicyArtifact load_policy(const std::filesystem::path& path, const EnvConfig* expected_env = nullptr);
PolicyArtifact policy_from_json(const json& j, const EnvConfig* expected_env = nullptr);

/// Backed-up value max_a Q(h', a), or its pessimistic form max_a max(Q - U, -v_max).
double backup_value(std::span<const double> q, std::span<const double> u, bool pessimistic, double v_max);

/// One regression set: target = r_star + gamma [Delta = 1] V^(0)(W') + gamma [Delta = 0] V^(i+1)(h').
double fqi_target(double r_star, bool delta, double gamma, double next_uncensored, double next_censored);

struct IterationLog {
  int iteration = 0;
  bool pessimistic = false;
  std::vector<std::string> choice;  // per depth: kernel and lambda picked
  std::size_t clipped_targets = 0;
};

struct TrainReport {
  int window_k = 0;
  int n_hat = 0;
  std::vector<std::size_t> bucket_sizes;
  std::size_t discarded = 0;
  std::size_t clipped_predictions = 0;
  std::vector<IterationLog> iterations;
};

struct TrainResult {
  PolicyArtifact artifact;
  TrainReport report;
};

/// Censored fitted Q-iteration over the depth partition of the augmented dataset. Throws
/// CoverageError naming the depth when some bucket 0..n_hat is empty.
TrainResult run_fqi(const AugmentedDataset& aug, const EnvConfig& env, const FqiConfig& cfg, std::uint64_t seed,
                    std::shared_ptr<const FeatureMap> features = nullptr);

}  // namespace cfqi
