#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace cfqi {

using json = nlohmann::json;

/// Ridge regression theta = (X^T X + lambda I)^{-1} X^T y, solved by Cholesky.
class RidgeModel {
 public:
  RidgeModel() = default;
  static RidgeModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda);
  /// Fit from sufficient statistics: gram = X^T X (without the ridge), xty = X^T y.
  static RidgeModel from_moments(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda,
                                 std::size_t n_samples);

  double predict(const Eigen::Ref<const Eigen::VectorXd>& phi) const { return theta_.dot(phi); }
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& X) const { return X * theta_; }
  /// phi^T Lambda^{-1} phi.
  double quadratic_form(const Eigen::Ref<const Eigen::VectorXd>& phi) const;
  Eigen::VectorXd quadratic_forms(const Eigen::MatrixXd& Phi) const;  // one per row

  const Eigen::VectorXd& theta() const { return theta_; }
  /// Lambda = X^T X + lambda I.
  const Eigen::MatrixXd& design() const { return design_; }
  double lambda() const { return lambda_; }
  std::size_t n_samples() const { return n_; }
  std::size_t dim() const { return static_cast<std::size_t>(theta_.size()); }

  json to_json(bool with_design) const;
  static RidgeModel from_json(const json& j);

 private:
  Eigen::VectorXd theta_;
  Eigen::MatrixXd design_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  bool has_design_ = false;
  double lambda_ = 1.0;
  std::size_t n_ = 0;
};

/// beta * sqrt(phi^T Lambda^{-1} phi).
double uq_eval(const RidgeModel& model, double beta, const Eigen::Ref<const Eigen::VectorXd>& phi);

enum class KernelKind { linear, polynomial, rbf };

struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  int degree = 2;             // polynomial: (x.y + coef0)^degree
  double coef0 = 1.0;
  double length_scale = 1.0;  // rbf: exp(-|x - y|^2 / (2 l^2))

  double operator()(const double* a, const double* b, std::size_t d) const;
  /// Size of the explicit feature expansion, or 0 when the kernel has none here.
  std::size_t explicit_dim(std::size_t d) const;
  void expand(const double* x, std::size_t d, double* out) const;
  Eigen::MatrixXd expand(const Eigen::MatrixXd& X) const;
  std::string label() const;

  json to_json() const;
  static KernelSpec from_json(const json& j);
  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

enum class Representation { automatic, primal, dual };

/// Kernel ridge regression. The primal form (ridge on the explicit expansion) is used when the
/// expansion is no wider than the sample; otherwise the dual form with stored support points.
/// With `center` the response mean is removed before fitting and added back at prediction.
class KernelRidgeModel {
 public:
  KernelRidgeModel() = default;
  static KernelRidgeModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const KernelSpec& kernel,
                              double lambda, bool center = true, Representation rep = Representation::automatic);

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& X) const;
  /// beta * sqrt(k(x,x) - k_S^T (G + lambda I)^{-1} k_S) / sqrt(lambda); in the primal form this is
  /// beta * sqrt(psi^T (Psi^T Psi + lambda I)^{-1} psi).
  double uq(double beta, const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd uq_rows(double beta, const Eigen::MatrixXd& X) const;

  const KernelSpec& kernel() const { return kernel_; }
  double lambda() const { return lambda_; }
  bool primal() const { return primal_; }
  double offset() const { return offset_; }
  const RidgeModel& ridge() const { return ridge_; }

  json to_json(bool with_uq) const;
  static KernelRidgeModel from_json(const json& j);

 private:
  friend class KrrDesign;
  KernelSpec kernel_;
  double lambda_ = 1.0;
  double offset_ = 0.0;
  bool primal_ = true;
  RidgeModel ridge_;
  Eigen::MatrixXd support_;  // rows
  Eigen::VectorXd alpha_;
  Eigen::LLT<Eigen::MatrixXd> chol_;  // G + lambda I
};

struct CvChoice {
  std::size_t kernel = 0;
  std::size_t lambda = 0;
  double cv_mse = 0.0;
  bool cv_used = false;
};

/// Fixed inputs X with every kernel and lambda candidate factorised once, so that many response
/// vectors can be cross-validated and fitted cheaply. Lambdas are kept in ascending order.
class KrrDesign {
 public:
  KrrDesign(Eigen::MatrixXd X, std::vector<KernelSpec> kernels, std::vector<double> lambdas, int folds,
            std::uint64_t seed, bool center = true, Representation rep = Representation::automatic);

  /// k-fold CV mean squared error minimiser; ties go to the smaller lambda. With fewer samples than
  /// folds CV is skipped and the lambda closest to 1 with the first kernel is returned.
  CvChoice select(const Eigen::VectorXd& y) const;
  KernelRidgeModel fit(const Eigen::VectorXd& y, const CvChoice& choice) const;
  KernelRidgeModel fit_cv(const Eigen::VectorXd& y) const { return fit(y, select(y)); }

  std::size_t n() const { return static_cast<std::size_t>(X_.rows()); }
  const std::vector<KernelSpec>& kernels() const { return kernels_; }
  const std::vector<double>& lambdas() const { return lambdas_; }

 private:
  struct Candidate {
    bool primal = true;
    Eigen::MatrixXd basis;  // expansion (primal, n x D) or Gram matrix (dual, n x n)
    std::vector<Eigen::LLT<Eigen::MatrixXd>> full;                // per lambda
    std::vector<std::vector<Eigen::LLT<Eigen::MatrixXd>>> folds;  // [fold][lambda]
    Eigen::MatrixXd gram;                                         // primal: basis^T basis
  };
  Eigen::MatrixXd X_;
  std::vector<KernelSpec> kernels_;
  std::vector<double> lambdas_;
  int n_folds_;
  bool center_;
  std::vector<std::vector<Eigen::Index>> fold_rows_;
  std::vector<std::vector<Eigen::Index>> train_rows_;
  std::vector<Candidate> candidates_;
};

/// Smallest beta such that |err_i| <= beta * width_i for at least a (1 - eps) fraction of the pairs.
double calibrate_beta(const std::vector<double>& abs_errors, const std::vector<double>& widths, double eps);

}  // namespace cfqi
