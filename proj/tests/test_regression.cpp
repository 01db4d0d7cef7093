#include <doctest.h>

#include <cmath>
#include <random>

#include "cfqi/regression.hpp"

using namespace cfqi;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = g(rng);
  return X;
}

}  // namespace

TEST_CASE("ridge closed forms") {
  MatrixXd X(1, 1);
  X << 1.0;
  VectorXd y(1);
  y << 2.0;
  CHECK(RidgeModel::fit(X, y, 1.0).theta()(0) == doctest::Approx(1.0));

  std::mt19937_64 rng(1);
  const MatrixXd Z = random_matrix(30, 4, rng);
  CHECK(RidgeModel::fit(Z, VectorXd::Zero(30), 1.0).theta().norm() == 0.0);

  const VectorXd yz = random_matrix(30, 1, rng).col(0);
  double prev = INFINITY;
  for (double lambda : {0.1, 1.0, 10.0}) {
    const double n = RidgeModel::fit(Z, yz, lambda).theta().norm();
    CHECK(n < prev);
    prev = n;
  }

  const VectorXd direct = (Z.transpose() * Z + 0.5 * MatrixXd::Identity(4, 4)).inverse() * Z.transpose() * yz;
  CHECK((RidgeModel::fit(Z, yz, 0.5).theta() - direct).norm() < 1e-10);
  const auto m = RidgeModel::from_moments(Z.transpose() * Z, Z.transpose() * yz, 0.5, 30);
  CHECK((m.theta() - direct).norm() < 1e-10);
}

TEST_CASE("uncertainty width") {
  const RidgeModel empty = RidgeModel::fit(MatrixXd(0, 2), VectorXd(0), 1.0);
  VectorXd phi(2);
  phi << 1.0, 0.0;
  CHECK(uq_eval(empty, 1.0, phi) == doctest::Approx(1.0));
  CHECK(uq_eval(empty, 0.0, phi) == 0.0);

  std::mt19937_64 rng(2);
  const MatrixXd X = random_matrix(40, 3, rng);
  const VectorXd y = random_matrix(40, 1, rng).col(0);
  MatrixXd X2(80, 3);
  X2 << X, X;
  VectorXd y2(80);
  y2 << y, y;
  const auto once = RidgeModel::fit(X, y, 1.0);
  const auto twice = RidgeModel::fit(X2, y2, 1.0);
  const MatrixXd probes = random_matrix(5, 3, rng);
  for (int i = 0; i < 5; ++i) {
    const VectorXd p = probes.row(i).transpose();
    CHECK(uq_eval(twice, 1.0, p) < uq_eval(once, 1.0, p));
    const double direct = std::sqrt(p.dot((X.transpose() * X + MatrixXd::Identity(3, 3)).inverse() * p));
    CHECK(uq_eval(once, 2.0, p) == doctest::Approx(2.0 * direct));
  }
}

TEST_CASE("polynomial expansion reproduces the kernel") {
  const KernelSpec k{KernelKind::polynomial, 2, 1.5};
  const double a[3] = {0.3, -1.2, 2.0};
  const double b[3] = {1.1, 0.4, -0.7};
  const std::size_t D = k.explicit_dim(3);
  CHECK(D == 1 + 3 + 3 + 3);
  std::vector<double> ea(D), eb(D);
  k.expand(a, 3, ea.data());
  k.expand(b, 3, eb.data());
  double dot = 0.0;
  for (std::size_t i = 0; i < D; ++i) dot += ea[i] * eb[i];
  CHECK(dot == doctest::Approx(std::pow(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 1.5, 2)));
  CHECK(k(a, b, 3) == doctest::Approx(dot));
  CHECK(KernelSpec{KernelKind::rbf}.explicit_dim(3) == 0);
}

TEST_CASE("linear kernel ridge equals ridge") {
  std::mt19937_64 rng(3);
  const MatrixXd X = random_matrix(25, 4, rng);
  const VectorXd y = random_matrix(25, 1, rng).col(0);
  const MatrixXd Q = random_matrix(10, 4, rng);
  const auto ridge = RidgeModel::fit(X, y, 1.0);
  for (auto rep : {Representation::primal, Representation::dual}) {
    const auto krr = KernelRidgeModel::fit(X, y, KernelSpec{KernelKind::linear}, 1.0, false, rep);
    CHECK((krr.predict_rows(Q) - ridge.predict_rows(Q)).cwiseAbs().maxCoeff() < 1e-8);
    for (int i = 0; i < 10; ++i) {
      const VectorXd q = Q.row(i).transpose();
      CHECK(krr.uq(1.0, q) == doctest::Approx(uq_eval(ridge, 1.0, q)).epsilon(1e-8));
    }
  }

  const KrrDesign design(X, {KernelSpec{KernelKind::linear}}, {0.1, 1.0, 10.0}, 5, 7, false);
  const auto choice = design.select(y);
  const auto picked = design.fit(y, choice);
  const auto reference = RidgeModel::fit(X, y, design.lambdas()[choice.lambda]);
  CHECK((picked.predict_rows(Q) - reference.predict_rows(Q)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("primal and dual polynomial fits agree") {
  std::mt19937_64 rng(4);
  const MatrixXd X = random_matrix(30, 3, rng);
  const VectorXd y = random_matrix(30, 1, rng).col(0);
  const MatrixXd Q = random_matrix(6, 3, rng);
  const KernelSpec k{KernelKind::polynomial, 2, 1.0};
  const auto p = KernelRidgeModel::fit(X, y, k, 0.3, true, Representation::primal);
  const auto d = KernelRidgeModel::fit(X, y, k, 0.3, true, Representation::dual);
  CHECK(p.primal());
  CHECK_FALSE(d.primal());
  CHECK((p.predict_rows(Q) - d.predict_rows(Q)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((p.uq_rows(1.0, Q) - d.uq_rows(1.0, Q)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("constant responses give constant predictions") {
  std::mt19937_64 rng(5);
  const MatrixXd X = random_matrix(40, 3, rng);
  const VectorXd y = VectorXd::Constant(40, 7.25);
  const MatrixXd Q = random_matrix(20, 3, rng);
  for (const auto& k : {KernelSpec{KernelKind::linear}, KernelSpec{KernelKind::polynomial, 2, 1.0},
                        KernelSpec{KernelKind::rbf, 2, 1.0, 0.8}}) {
    const auto m = KernelRidgeModel::fit(X, y, k, 1.0);
    CHECK((m.predict_rows(Q).array() - 7.25).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("rbf fit of a smooth curve") {
  const int n = 200;
  MatrixXd X(n, 1);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 3.0 * i / (n - 1);
    y(i) = std::sin(X(i, 0));
  }
  const KrrDesign design(X, {KernelSpec{KernelKind::rbf, 2, 1.0, 0.3}, KernelSpec{KernelKind::rbf, 2, 1.0, 1.0}},
                         {1e-4, 1e-3, 1e-2}, 5, 11);
  const auto choice = design.select(y);
  CHECK(choice.cv_used);
  const auto m = design.fit(y, choice);
  const double rmse = std::sqrt((m.predict_rows(X) - y).squaredNorm() / n);
  CHECK(rmse < 0.05);
}

TEST_CASE("cross-validation edge cases") {
  std::mt19937_64 rng(6);
  const MatrixXd X = random_matrix(3, 2, rng);
  const VectorXd y = random_matrix(3, 1, rng).col(0);
  const KrrDesign small(X, {KernelSpec{KernelKind::linear}}, {10.0, 0.1, 2.0}, 5, 1);
  const auto c = small.select(y);
  CHECK_FALSE(c.cv_used);
  CHECK(small.lambdas()[c.lambda] == 2.0);

  const MatrixXd Z = random_matrix(20, 2, rng);
  const KrrDesign zero(Z, {KernelSpec{KernelKind::linear}}, {0.1, 1.0, 10.0}, 5, 1);
  const auto z = zero.select(VectorXd::Zero(20));
  CHECK(z.cv_used);
  CHECK(z.lambda == 0);
}

TEST_CASE("model serialization") {
  std::mt19937_64 rng(7);
  const MatrixXd X = random_matrix(30, 3, rng);
  const VectorXd y = random_matrix(30, 1, rng).col(0);
  const MatrixXd Q = random_matrix(5, 3, rng);
  for (const auto& k : {KernelSpec{KernelKind::polynomial, 2, 1.0}, KernelSpec{KernelKind::rbf, 2, 1.0, 0.7}}) {
    const auto m = KernelRidgeModel::fit(X, y, k, 0.5);
    const auto back = KernelRidgeModel::from_json(json::parse(m.to_json(true).dump()));
    CHECK((back.predict_rows(Q) - m.predict_rows(Q)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.uq_rows(1.0, Q) - m.uq_rows(1.0, Q)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("beta calibration") {
  const std::vector<double> err{1.0, 2.0, 3.0, 4.0, 10.0};
  const std::vector<double> w(5, 1.0);
  CHECK(calibrate_beta(err, w, 0.2) == doctest::Approx(4.0));
  CHECK(calibrate_beta(err, w, 0.01) == doctest::Approx(10.0));
  CHECK_THROWS(calibrate_beta(err, w, 0.0));
  const double b = calibrate_beta(err, w, 0.4);
  int covered = 0;
  for (double e : err) covered += e <= b ? 1 : 0;
  CHECK(covered >= 3);
}
