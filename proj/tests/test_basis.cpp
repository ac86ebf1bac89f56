#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "fence/basis.hpp"
#include "fence/error.hpp"

using namespace fence;

namespace {

// Independent Cox-de Boor recursion over the same clamped knot vector.
std::vector<double> clamped_knots(int R) {
  std::vector<double> k;
  for (int i = 0; i < 4; ++i) k.push_back(0.0);
  const int interior = R - 4;
  for (int i = 1; i <= interior; ++i) k.push_back(static_cast<double>(i) / (interior + 1));
  for (int i = 0; i < 4; ++i) k.push_back(1.0);
  return k;
}

double cox_de_boor(const std::vector<double>& k, int i, int deg, double t) {
  if (deg == 0) {
    const bool last = t == 1.0 && k[i + 1] == 1.0 && k[i] < 1.0;
    return ((k[i] <= t && t < k[i + 1]) || last) ? 1.0 : 0.0;
  }
  double out = 0.0;
  const double d1 = k[i + deg] - k[i];
  const double d2 = k[i + deg + 1] - k[i + 1];
  if (d1 > 0.0) out += (t - k[i]) / d1 * cox_de_boor(k, i, deg - 1, t);
  if (d2 > 0.0) out += (k[i + deg + 1] - t) / d2 * cox_de_boor(k, i + 1, deg - 1, t);
  return out;
}

// Derivative of order `order` via the standard B-spline derivative recursion.
double cox_de_boor_derivative(const std::vector<double>& k, int i, int deg, double t, int order) {
  if (order == 0) return cox_de_boor(k, i, deg, t);
  double out = 0.0;
  const double d1 = k[i + deg] - k[i];
  const double d2 = k[i + deg + 1] - k[i + 1];
  if (d1 > 0.0) out += deg / d1 * cox_de_boor_derivative(k, i, deg - 1, t, order - 1);
  if (d2 > 0.0) out -= deg / d2 * cox_de_boor_derivative(k, i + 1, deg - 1, t, order - 1);
  return out;
}

Eigen::MatrixXd simpson_penalty(int R, int panels) {
  const auto k = clamped_knots(R);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(R, R);
  const int m = 2 * panels;
  const double h = 1.0 / m;
  for (int u = 0; u <= m; ++u) {
    const double t = u * h;
    const double w = (u == 0 || u == m) ? 1.0 : (u % 2 == 1 ? 4.0 : 2.0);
    Eigen::VectorXd d(R);
    for (int r = 0; r < R; ++r) d[r] = cox_de_boor_derivative(k, r, 3, t, 2);
    out.noalias() += w * d * d.transpose();
  }
  return out * (h / 3.0);
}

// Greville abscissae: coefficients that reproduce t exactly.
Eigen::VectorXd greville(int R) {
  const auto k = clamped_knots(R);
  Eigen::VectorXd g(R);
  for (int r = 0; r < R; ++r) g[r] = (k[r + 1] + k[r + 2] + k[r + 3]) / 3.0;
  return g;
}

Eigen::MatrixXd random_spd(int R, std::mt19937_64& rng) {
  std::normal_distribution<double> N;
  Eigen::MatrixXd X(R, R);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j) X(i, j) = N(rng);
  return X * X.transpose() + Eigen::MatrixXd::Identity(R, R);
}

}  // namespace

TEST_CASE("spline system rejects too few functions") {
  CHECK_THROWS_AS(build_spline_system(5), InvalidConfiguration);
  CHECK_NOTHROW(build_spline_system(6));
}

TEST_CASE("clamped boundary: only the first function is nonzero at 0") {
  const SplineSystem sys = build_spline_system(6);
  const Eigen::VectorXd b = sys.evaluate(0.0);
  CHECK(b[0] == doctest::Approx(1.0).epsilon(1e-15));
  for (int r = 1; r < 6; ++r) CHECK(b[r] == 0.0);
  const Eigen::VectorXd e = sys.evaluate(1.0);
  CHECK(e[5] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("partition of unity") {
  for (int R : {6, 10, 17}) {
    const SplineSystem sys = build_spline_system(R);
    double worst = 0.0;
    for (int u = 0; u <= 2000; ++u) worst = std::max(worst, std::abs(sys.evaluate(u / 2000.0).sum() - 1.0));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("evaluation matches Cox-de Boor") {
  const int R = 10;
  const SplineSystem sys = build_spline_system(R);
  const auto k = clamped_knots(R);
  for (double t : {0.37, 0.0, 1.0, 0.5, 0.1234, 0.999}) {
    const Eigen::VectorXd b = sys.evaluate(t);
    for (int r = 0; r < R; ++r) CHECK(b[r] == doctest::Approx(cox_de_boor(k, r, 3, t)).epsilon(1e-13));
  }
}

TEST_CASE("derivatives match the derivative recursion") {
  const int R = 8;
  const SplineSystem sys = build_spline_system(R);
  const auto k = clamped_knots(R);
  for (double t : {0.05, 0.3, 0.61, 0.93}) {
    for (int order : {1, 2}) {
      const Eigen::VectorXd d = sys.derivative(t, order);
      for (int r = 0; r < R; ++r) {
        CHECK(d[r] == doctest::Approx(cox_de_boor_derivative(k, r, 3, t, order)).epsilon(1e-10).scale(1.0));
      }
    }
  }
}

TEST_CASE("design matrices") {
  const SplineSystem sys = build_spline_system(6);
  const std::vector<double> none;
  CHECK(evaluate_design(sys, none).rows() == 0);
  CHECK(evaluate_design(sys, none).cols() == 6);
  const std::vector<double> one{0.42};
  CHECK(evaluate_design(sys, one).row(0).sum() == doctest::Approx(1.0).epsilon(1e-14));
  const std::vector<double> bad{0.2, 1.5};
  CHECK_THROWS_AS(evaluate_design(sys, bad), DomainError);
  const std::vector<double> negative{-0.01};
  CHECK_THROWS_AS(evaluate_design(sys, negative), DomainError);

  const ReparamSystem rs = build_reparam_system(6);
  const std::vector<double> half{0.5};
  const Eigen::MatrixXd row = evaluate_design(rs, half);
  CHECK(row(0, 0) == doctest::Approx(1.0));
  CHECK(row(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("penalty matches a Simpson oracle") {
  const SplineSystem sys = build_spline_system(6);
  const Eigen::MatrixXd omega = penalty_matrix(sys).omega;
  const Eigen::MatrixXd oracle = simpson_penalty(6, 10000);
  CHECK((omega - oracle).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((omega - omega.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("penalty null space contains affine functions") {
  for (int R : {6, 10, 14}) {
    const Eigen::MatrixXd omega = penalty_matrix(build_spline_system(R)).omega;
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(R);
    const Eigen::VectorXd lin = greville(R);
    CHECK(std::abs(one.dot(omega * one)) <= 1e-10);
    CHECK(std::abs(lin.dot(omega * lin)) <= 1e-10);
    const Eigen::VectorXd affine = 2.5 * one - 3.0 * lin;
    CHECK(std::abs(affine.dot(omega * affine)) <= 1e-10);
  }
}

TEST_CASE("Greville coefficients reproduce t") {
  const SplineSystem sys = build_spline_system(9);
  const Eigen::VectorXd g = greville(9);
  for (double t : {0.0, 0.2, 0.77, 1.0}) CHECK(sys.evaluate(t).dot(g) == doctest::Approx(t).epsilon(1e-13));
}

TEST_CASE("reparameterization") {
  const int R = 10;
  const SplineSystem sys = build_spline_system(R);
  const PenaltyMatrix pen = penalty_matrix(sys);
  const ReparamSystem rs = reparameterize(pen, sys);

  SUBCASE("rank and positivity") {
    CHECK(rs.D_tilde.size() == R - 2);
    CHECK(rs.D_tilde.minCoeff() > 0.0);
  }
  SUBCASE("nonlinear block has identity penalty") {
    const Eigen::MatrixXd P = rs.nonlinear_map.transpose() * pen.omega * rs.nonlinear_map;
    CHECK((P - Eigen::MatrixXd::Identity(R - 2, R - 2)).cwiseAbs().maxCoeff() <= 1e-8);
  }
  SUBCASE("Gram matrix is symmetric positive definite") {
    CHECK((rs.J - rs.J.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::LLT<Eigen::MatrixXd> chol(rs.J);
    CHECK(chol.info() == Eigen::Success);
  }
  SUBCASE("Gram matrix matches Simpson quadrature of the transformed basis") {
    const int m = 20000;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(R, R);
    for (int u = 0; u <= m; ++u) {
      const double t = static_cast<double>(u) / m;
      const double w = (u == 0 || u == m) ? 1.0 : (u % 2 == 1 ? 4.0 : 2.0);
      const Eigen::VectorXd b = rs.evaluate(t);
      J.noalias() += w * b * b.transpose();
    }
    J /= 3.0 * m;
    CHECK((J - rs.J).cwiseAbs().maxCoeff() <= 1e-8);
  }
  SUBCASE("evaluation agrees with the direct formula") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int q = 0; q < 20; ++q) {
      const double t = U(rng);
      Eigen::VectorXd direct(R);
      direct[0] = 1.0;
      direct[1] = t;
      direct.tail(R - 2) = rs.nonlinear_map.transpose() * sys.evaluate(t);
      CHECK((rs.evaluate(t) - direct).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
  SUBCASE("wrong rank is reported") {
    PenaltyMatrix broken = pen;
    broken.omega.setZero();
    CHECK_THROWS_AS(reparameterize(broken, sys), NumericalRankError);
  }
}

TEST_CASE("coefficient prior precision") {
  const Eigen::VectorXd d = coefficient_prior_precision(8, 3.5);
  CHECK(d.size() == 8);
  CHECK(d[0] == doctest::Approx(1.0 / kUnpenalizedVariance));
  CHECK(d[1] == doctest::Approx(1.0 / kUnpenalizedVariance));
  for (int r = 2; r < 8; ++r) CHECK(d[r] == 3.5);
}

TEST_CASE("orthogonal projection") {
  const int R = 8;
  const ReparamSystem rs = build_reparam_system(R);
  const Eigen::MatrixXd& J = rs.J;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> N;
  auto random_vec = [&] {
    Eigen::VectorXd v(R);
    for (int r = 0; r < R; ++r) v[r] = N(rng);
    return v;
  };

  SUBCASE("no others leaves the input alone") {
    const Eigen::VectorXd a = random_vec();
    const Eigen::MatrixXd none(R, 0);
    CHECK((orthogonal_project(a, none, random_spd(R, rng), J) - a).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("random inputs become J-orthogonal to the others") {
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::MatrixXd others(R, 2);
      others.col(0) = random_vec();
      others.col(1) = random_vec();
      const Eigen::VectorXd out = orthogonal_project(random_vec(), others, random_spd(R, rng), J);
      CHECK((others.transpose() * J * out).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }
  SUBCASE("an already orthogonal input is unchanged") {
    Eigen::MatrixXd others(R, 2);
    others.col(0) = random_vec();
    others.col(1) = random_vec();
    Eigen::VectorXd a = random_vec();
    const Eigen::MatrixXd P = J * others;
    a -= others * (others.transpose() * J * others).ldlt().solve(P.transpose() * a);
    const Eigen::VectorXd out = orthogonal_project(a, others, random_spd(R, rng), J);
    CHECK((out - a).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("degenerate others are reported") {
    Eigen::MatrixXd others = Eigen::MatrixXd::Zero(R, 2);
    CHECK_THROWS_AS(orthogonal_project(random_vec(), others, random_spd(R, rng), J), DegenerateBasisError);
  }
}

TEST_CASE("normalize") {
  const int R = 8;
  const ReparamSystem rs = build_reparam_system(R);
  const Eigen::MatrixXd& J = rs.J;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N;
  Eigen::VectorXd a(R);
  for (int r = 0; r < R; ++r) a[r] = N(rng);
  const Eigen::VectorXd u = normalize(a, J);
  CHECK(std::abs(u.dot(J * u) - 1.0) <= 1e-12);
  CHECK((normalize(7.0 * a, J) - u).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((normalize(u, J) - u).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK_THROWS_AS(normalize(Eigen::VectorXd::Zero(R), J), DegenerateBasisError);
}

TEST_CASE("sequential project and normalize yields a J-orthonormal set") {
  const int R = 10, S = 5;
  const ReparamSystem rs = build_reparam_system(R);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N;
  Eigen::MatrixXd A(R, 0);
  for (int k = 0; k < S; ++k) {
    Eigen::VectorXd a(R);
    for (int r = 0; r < R; ++r) a[r] = N(rng);
    const Eigen::VectorXd col = normalize(orthogonal_project(a, A, random_spd(R, rng), rs.J), rs.J);
    A.conservativeResize(R, k + 1);
    A.col(k) = col;
  }
  CHECK(orthonormality_error(A, rs.J) <= 1e-8);
}
