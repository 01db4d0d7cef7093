#include "cfqi/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cfqi/rng.hpp"

namespace cfqi {

namespace {

void require_finite(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (!X.allFinite() || !y.allFinite()) throw std::invalid_argument("regression inputs must be finite");
  if (X.rows() != y.size()) throw std::invalid_argument("design and response differ in length");
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw std::runtime_error("regularised design is not positive definite");
  return llt;
}

Eigen::MatrixXd with_ridge(Eigen::MatrixXd m, double lambda) {
  m.diagonal().array() += lambda;
  return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw std::invalid_argument("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::MatrixXd gram_matrix(const KernelSpec& k, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const auto d = static_cast<std::size_t>(A.cols());
  if (k.kind == KernelKind::linear) return A * B.transpose();
  if (k.kind == KernelKind::polynomial) return (A * B.transpose()).array().unaryExpr([&](double v) {
      return std::pow(v + k.coef0, k.degree);
    });
  Eigen::MatrixXd G(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const Eigen::VectorXd a = A.row(i);
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const Eigen::VectorXd b = B.row(j);
      G(i, j) = k(a.data(), b.data(), d);
    }
  }
  return G;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = M.row(rows[i]);
  return out;
}

Eigen::VectorXd entries_of(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

Eigen::MatrixXd block_of(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& r,
                         const std::vector<Eigen::Index>& c) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = M(r[i], c[j]);
  return out;
}

}  // namespace

RidgeModel RidgeModel::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
  require_finite(X, y);
  return from_moments(X.transpose() * X, X.transpose() * y, lambda, static_cast<std::size_t>(X.rows()));
}

RidgeModel RidgeModel::from_moments(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda,
                                    std::size_t n_samples) {
  if (!(lambda > 0.0)) throw std::invalid_argument("ridge lambda must be > 0");
  RidgeModel m;
  m.lambda_ = lambda;
  m.n_ = n_samples;
  m.design_ = with_ridge(gram, lambda);
  m.llt_ = factor(m.design_);
  m.theta_ = m.llt_.solve(xty);
  m.has_design_ = true;
  return m;
}

double RidgeModel::quadratic_form(const Eigen::Ref<const Eigen::VectorXd>& phi) const {
  if (!has_design_) throw std::logic_error("ridge model was stored without its design matrix");
  const Eigen::VectorXd v = llt_.matrixL().solve(phi);
  return v.squaredNorm();
}

Eigen::VectorXd RidgeModel::quadratic_forms(const Eigen::MatrixXd& Phi) const {
  if (!has_design_) throw std::logic_error("ridge model was stored without its design matrix");
  const Eigen::MatrixXd v = llt_.matrixL().solve(Phi.transpose());
  return v.colwise().squaredNorm().transpose();
}

json RidgeModel::to_json(bool with_design) const {
  json j{{"lambda", lambda_}, {"n", n_}, {"theta", to_std(theta_)}};
  if (with_design) j["design"] = matrix_to_json(design_);
  return j;
}

RidgeModel RidgeModel::from_json(const json& j) {
  RidgeModel m;
  m.lambda_ = j.at("lambda").get<double>();
  m.n_ = j.at("n").get<std::size_t>();
  m.theta_ = vector_from_json(j.at("theta"));
  if (j.contains("design")) {
    m.design_ = matrix_from_json(j.at("design"));
    if (m.design_.rows() != m.theta_.size() || m.design_.cols() != m.theta_.size())
      throw std::invalid_argument("ridge design does not match theta");
    m.llt_ = factor(m.design_);
    m.has_design_ = true;
  }
  return m;
}

double uq_eval(const RidgeModel& model, double beta, const Eigen::Ref<const Eigen::VectorXd>& phi) {
  if (beta == 0.0) return 0.0;
  return beta * std::sqrt(std::max(0.0, model.quadratic_form(phi)));
}

double KernelSpec::operator()(const double* a, const double* b, std::size_t d) const {
  double s = 0.0;
  switch (kind) {
    case KernelKind::linear:
      for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
      return s;
    case KernelKind::polynomial:
      for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
      return std::pow(s + coef0, degree);
    case KernelKind::rbf:
      for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return std::exp(-s / (2.0 * length_scale * length_scale));
  }
  return 0.0;
}

std::size_t KernelSpec::explicit_dim(std::size_t d) const {
  switch (kind) {
    case KernelKind::linear: return d;
    case KernelKind::polynomial:
      if (degree == 1) return d + 1;
      if (degree == 2) return 1 + d + d * (d + 1) / 2;
      return 0;
    case KernelKind::rbf: return 0;
  }
  return 0;
}

void KernelSpec::expand(const double* x, std::size_t d, double* out) const {
  if (kind == KernelKind::linear) {
    std::copy(x, x + d, out);
    return;
  }
  if (kind != KernelKind::polynomial || (degree != 1 && degree != 2))
    throw std::logic_error("kernel " + label() + " has no explicit expansion");
  std::size_t k = 0;
  if (degree == 1) {
    out[k++] = std::sqrt(coef0);
    for (std::size_t i = 0; i < d; ++i) out[k++] = x[i];
    return;
  }
  out[k++] = coef0;
  const double s = std::sqrt(2.0 * coef0);
  for (std::size_t i = 0; i < d; ++i) out[k++] = s * x[i];
  for (std::size_t i = 0; i < d; ++i) {
    out[k++] = x[i] * x[i];
    for (std::size_t j = i + 1; j < d; ++j) out[k++] = std::sqrt(2.0) * x[i] * x[j];
  }
}

Eigen::MatrixXd KernelSpec::expand(const Eigen::MatrixXd& X) const {
  const auto d = static_cast<std::size_t>(X.cols());
  const auto D = explicit_dim(d);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor in = X;
  RowMajor out(X.rows(), static_cast<Eigen::Index>(D));
  for (Eigen::Index r = 0; r < X.rows(); ++r) expand(in.row(r).data(), d, out.row(r).data());
  return out;
}

std::string KernelSpec::label() const {
  switch (kind) {
    case KernelKind::linear: return "linear";
    case KernelKind::polynomial: return "poly" + std::to_string(degree);
    case KernelKind::rbf: return "rbf(" + std::to_string(length_scale) + ")";
  }
  return "?";
}

json KernelSpec::to_json() const {
  switch (kind) {
    case KernelKind::linear: return {{"kind", "linear"}};
    case KernelKind::polynomial: return {{"kind", "polynomial"}, {"degree", degree}, {"coef0", coef0}};
    case KernelKind::rbf: return {{"kind", "rbf"}, {"length_scale", length_scale}};
  }
  return {};
}

KernelSpec KernelSpec::from_json(const json& j) {
  KernelSpec k;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "linear") {
    k.kind = KernelKind::linear;
  } else if (kind == "polynomial") {
    k.kind = KernelKind::polynomial;
    k.degree = j.value("degree", 2);
    k.coef0 = j.value("coef0", 1.0);
    if (k.degree < 1) throw std::invalid_argument("polynomial degree must be >= 1");
  } else if (kind == "rbf") {
    k.kind = KernelKind::rbf;
    k.length_scale = j.value("length_scale", 1.0);
    if (!(k.length_scale > 0.0)) throw std::invalid_argument("rbf length_scale must be > 0");
  } else {
    throw std::invalid_argument("unknown kernel '" + kind + "'");
  }
  return k;
}

KernelRidgeModel KernelRidgeModel::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const KernelSpec& kernel,
                                       double lambda, bool center, Representation rep) {
  KrrDesign design(X, {kernel}, {lambda}, 1, 0, center, rep);
  return design.fit(y, CvChoice{});
}

double KernelRidgeModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const auto d = static_cast<std::size_t>(x.size());
  if (primal_) {
    Eigen::VectorXd psi(static_cast<Eigen::Index>(kernel_.explicit_dim(d)));
    kernel_.expand(x.data(), d, psi.data());
    return offset_ + ridge_.predict(psi);
  }
  double s = offset_;
  for (Eigen::Index i = 0; i < support_.rows(); ++i) {
    const Eigen::VectorXd row = support_.row(i);
    s += alpha_(i) * kernel_(row.data(), x.data(), d);
  }
  return s;
}

Eigen::VectorXd KernelRidgeModel::predict_rows(const Eigen::MatrixXd& X) const {
  if (primal_) return (kernel_.expand(X) * ridge_.theta()).array() + offset_;
  return (gram_matrix(kernel_, X, support_) * alpha_).array() + offset_;
}

double KernelRidgeModel::uq(double beta, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::MatrixXd X = x.transpose();
  return uq_rows(beta, X)(0);
}

Eigen::VectorXd KernelRidgeModel::uq_rows(double beta, const Eigen::MatrixXd& X) const {
  Eigen::VectorXd out(X.rows());
  if (beta == 0.0) return out.setZero();
  if (primal_) {
    out = ridge_.quadratic_forms(kernel_.expand(X));
  } else {
    if (chol_.rows() == 0) throw std::logic_error("kernel model was stored without its posterior factor");
    const Eigen::MatrixXd ks = gram_matrix(kernel_, support_, X);
    const Eigen::MatrixXd v = chol_.matrixL().solve(ks);
    const auto d = static_cast<std::size_t>(X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const Eigen::VectorXd row = X.row(r);
      out(r) = (kernel_(row.data(), row.data(), d) - v.col(r).squaredNorm()) / lambda_;
    }
  }
  return beta * out.cwiseMax(0.0).cwiseSqrt();
}

json KernelRidgeModel::to_json(bool with_uq) const {
  json j{{"kernel", kernel_.to_json()}, {"lambda", lambda_}, {"offset", offset_}, {"primal", primal_}};
  if (primal_) {
    j["ridge"] = ridge_.to_json(with_uq);
  } else {
    j["support"] = matrix_to_json(support_);
    j["alpha"] = to_std(alpha_);
  }
  return j;
}

KernelRidgeModel KernelRidgeModel::from_json(const json& j) {
  KernelRidgeModel m;
  m.kernel_ = KernelSpec::from_json(j.at("kernel"));
  m.lambda_ = j.at("lambda").get<double>();
  m.offset_ = j.at("offset").get<double>();
  m.primal_ = j.at("primal").get<bool>();
  if (m.primal_) {
    m.ridge_ = RidgeModel::from_json(j.at("ridge"));
  } else {
    m.support_ = matrix_from_json(j.at("support"));
    m.alpha_ = vector_from_json(j.at("alpha"));
    if (m.alpha_.size() != m.support_.rows()) throw std::invalid_argument("dual coefficients do not match support");
    m.chol_ = factor(with_ridge(gram_matrix(m.kernel_, m.support_, m.support_), m.lambda_));
  }
  return m;
}

KrrDesign::KrrDesign(Eigen::MatrixXd X, std::vector<KernelSpec> kernels, std::vector<double> lambdas, int folds,
                     std::uint64_t seed, bool center, Representation rep)
    : X_(std::move(X)), kernels_(std::move(kernels)), lambdas_(std::move(lambdas)), n_folds_(folds), center_(center) {
  if (kernels_.empty() || lambdas_.empty()) throw std::invalid_argument("empty kernel or lambda grid");
  if (!X_.allFinite()) throw std::invalid_argument("regression inputs must be finite");
  if (X_.rows() == 0) throw std::invalid_argument("cannot fit on zero samples");
  for (double l : lambdas_)
    if (!(l > 0.0)) throw std::invalid_argument("lambda must be > 0");
  std::sort(lambdas_.begin(), lambdas_.end());
  lambdas_.erase(std::unique(lambdas_.begin(), lambdas_.end()), lambdas_.end());

  const auto n = X_.rows();
  const bool cv = n_folds_ >= 2 && n >= n_folds_ && (kernels_.size() > 1 || lambdas_.size() > 1);
  if (cv) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(n)));
    std::shuffle(perm.begin(), perm.end(), rng);
    fold_rows_.resize(static_cast<std::size_t>(n_folds_));
    for (std::size_t i = 0; i < perm.size(); ++i) fold_rows_[i % fold_rows_.size()].push_back(perm[i]);
    for (auto& f : fold_rows_) std::sort(f.begin(), f.end());
    train_rows_.resize(fold_rows_.size());
    for (std::size_t f = 0; f < fold_rows_.size(); ++f) {
      std::vector<char> held(static_cast<std::size_t>(n), 0);
      for (auto r : fold_rows_[f]) held[static_cast<std::size_t>(r)] = 1;
      for (Eigen::Index r = 0; r < n; ++r)
        if (!held[static_cast<std::size_t>(r)]) train_rows_[f].push_back(r);
    }
  }

  candidates_.resize(kernels_.size());
  for (std::size_t k = 0; k < kernels_.size(); ++k) {
    auto& c = candidates_[k];
    const auto D = kernels_[k].explicit_dim(static_cast<std::size_t>(X_.cols()));
    c.primal = rep == Representation::primal ||
               (rep == Representation::automatic && D > 0 && static_cast<Eigen::Index>(D) <= n);
    if (c.primal && D == 0) throw std::invalid_argument("kernel " + kernels_[k].label() + " has no primal form");
    if (c.primal) {
      c.basis = kernels_[k].expand(X_);
      c.gram = c.basis.transpose() * c.basis;
      for (double l : lambdas_) c.full.push_back(factor(with_ridge(c.gram, l)));
      for (std::size_t f = 0; f < fold_rows_.size(); ++f) {
        const Eigen::MatrixXd held = rows_of(c.basis, fold_rows_[f]);
        const Eigen::MatrixXd g = c.gram - held.transpose() * held;
        auto& per = c.folds.emplace_back();
        for (double l : lambdas_) per.push_back(factor(with_ridge(g, l)));
      }
    } else {
      c.basis = gram_matrix(kernels_[k], X_, X_);
      for (double l : lambdas_) c.full.push_back(factor(with_ridge(c.basis, l)));
      for (std::size_t f = 0; f < fold_rows_.size(); ++f) {
        const Eigen::MatrixXd g = block_of(c.basis, train_rows_[f], train_rows_[f]);
        auto& per = c.folds.emplace_back();
        for (double l : lambdas_) per.push_back(factor(with_ridge(g, l)));
      }
    }
  }
}

CvChoice KrrDesign::select(const Eigen::VectorXd& y) const {
  if (y.size() != X_.rows()) throw std::invalid_argument("response length does not match the design");
  if (!y.allFinite()) throw std::invalid_argument("regression inputs must be finite");
  CvChoice best;
  if (fold_rows_.empty()) {
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < lambdas_.size(); ++l) {
      const double g = std::abs(std::log(lambdas_[l]));
      if (g < gap) {
        gap = g;
        best.lambda = l;
      }
    }
    return best;
  }
  best.cv_used = true;
  best.cv_mse = std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(X_.rows());
  for (std::size_t k = 0; k < candidates_.size(); ++k) {
    const auto& c = candidates_[k];
    std::vector<double> sse(lambdas_.size(), 0.0);
    for (std::size_t f = 0; f < fold_rows_.size(); ++f) {
      const auto& tr = train_rows_[f];
      const auto& te = fold_rows_[f];
      const Eigen::VectorXd y_tr = entries_of(y, tr);
      const double mu = center_ ? y_tr.mean() : 0.0;
      const Eigen::VectorXd y_te = entries_of(y, te).array() - mu;
      if (c.primal) {
        const Eigen::MatrixXd b_tr = rows_of(c.basis, tr);
        const Eigen::MatrixXd b_te = rows_of(c.basis, te);
        const Eigen::VectorXd rhs = b_tr.transpose() * (y_tr.array() - mu).matrix();
        for (std::size_t l = 0; l < lambdas_.size(); ++l) {
          const Eigen::VectorXd theta = c.folds[f][l].solve(rhs);
          sse[l] += (b_te * theta - y_te).squaredNorm();
        }
      } else {
        const Eigen::MatrixXd cross = block_of(c.basis, te, tr);
        const Eigen::VectorXd rhs = y_tr.array() - mu;
        for (std::size_t l = 0; l < lambdas_.size(); ++l) {
          const Eigen::VectorXd alpha = c.folds[f][l].solve(rhs);
          sse[l] += (cross * alpha - y_te).squaredNorm();
        }
      }
    }
    for (std::size_t l = 0; l < lambdas_.size(); ++l) {
      const double mse = sse[l] / n;
      if (mse < best.cv_mse || (mse == best.cv_mse && lambdas_[l] < lambdas_[best.lambda])) {
        best.cv_mse = mse;
        best.kernel = k;
        best.lambda = l;
      }
    }
  }
  return best;
}

KernelRidgeModel KrrDesign::fit(const Eigen::VectorXd& y, const CvChoice& choice) const {
  if (y.size() != X_.rows()) throw std::invalid_argument("response length does not match the design");
  if (!y.allFinite()) throw std::invalid_argument("regression inputs must be finite");
  const auto& c = candidates_.at(choice.kernel);
  KernelRidgeModel m;
  m.kernel_ = kernels_[choice.kernel];
  m.lambda_ = lambdas_.at(choice.lambda);
  m.offset_ = center_ ? y.mean() : 0.0;
  m.primal_ = c.primal;
  const Eigen::VectorXd r = y.array() - m.offset_;
  if (c.primal) {
    m.ridge_ = RidgeModel::from_moments(c.gram, c.basis.transpose() * r, m.lambda_,
                                        static_cast<std::size_t>(X_.rows()));
  } else {
    m.support_ = X_;
    m.chol_ = c.full[choice.lambda];
    m.alpha_ = m.chol_.solve(r);
  }
  return m;
}

double calibrate_beta(const std::vector<double>& abs_errors, const std::vector<double>& widths, double eps) {
  if (abs_errors.size() != widths.size() || abs_errors.empty())
    throw std::invalid_argument("calibration needs matching, nonempty error and width samples");
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("eps must lie in (0, 1)");
  std::vector<double> ratio;
  ratio.reserve(abs_errors.size());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] > 0.0) {
      ratio.push_back(abs_errors[i] / widths[i]);
    } else {
      ratio.push_back(abs_errors[i] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    }
  }
  std::sort(ratio.begin(), ratio.end());
  const auto need = static_cast<std::size_t>(std::ceil((1.0 - eps) * static_cast<double>(ratio.size())));
  return ratio[std::max<std::size_t>(need, 1) - 1];
}

}  // namespace cfqi
