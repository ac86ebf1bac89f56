#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "fence/error.hpp"
#include "fence/model.hpp"

using namespace fence;

namespace {

Eigen::MatrixXd random_matrix(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, scale);
  Eigen::MatrixXd X(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) X(i, j) = N(rng);
  return X;
}

BlockEffectMatrix random_blocks(int p, int K, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> N(0.0, scale);
  BlockEffectMatrix B(p, K);
  for (int j = 0; j < p; ++j)
    for (int l = 0; l < p; ++l)
      if (j != l)
        for (int a = 0; a < K; ++a)
          for (int b = 0; b < K; ++b) B.block(j, l)(a, b) = N(rng);
  return B;
}

// Spectral radius as lim ||B^m||^{1/m}, with m = 2^40 reached by normalized repeated squaring.
double power_radius(const Eigen::MatrixXd& B) {
  Eigen::MatrixXd P = B;
  double log_scale = 0.0;  // log of the factor divided out of B^(2^k)
  for (int k = 0; k < 40; ++k) {
    const double nrm = P.norm();
    if (nrm == 0.0) return 0.0;
    P /= nrm;
    log_scale += std::log(nrm) / std::ldexp(1.0, k);
    P = P * P;
  }
  return std::exp(log_scale + std::log(P.norm()) / std::ldexp(1.0, 40));
}

}  // namespace

TEST_CASE("cyclic graph") {
  CyclicGraph g(3);
  CHECK(g.edge_count() == 0);
  g.set_edge(0, 1, true);
  g.set_edge(1, 0, true);
  CHECK(g.edge(0, 1));
  CHECK(g.edge(1, 0));
  CHECK_FALSE(g.edge(2, 0));
  CHECK(g.edge_count() == 2);
  CHECK_THROWS_AS(g.set_edge(1, 1, true), DomainError);
  const Eigen::MatrixXd m = g.to_matrix();
  CHECK(m(0, 1) == 1.0);
  CHECK(m.diagonal().sum() == 0.0);
  g.set_edge(0, 1, false);
  CHECK(g.edge_count() == 1);
}

TEST_CASE("embedding") {
  SUBCASE("zero maps to zero") {
    const BlockEffectMatrix B(3, 2);
    CHECK(embed(B, 4).isZero());
    CHECK(embed(B, 4).rows() == 12);
  }
  SUBCASE("single effect lands at the causal positions") {
    BlockEffectMatrix B(2, 1);
    B.block(1, 0)(0, 0) = 0.5;
    const Eigen::MatrixXd Bt = embed(B, 2);
    REQUIRE(Bt.rows() == 4);
    const CoefficientLayout lay{2, 2, 1};
    CHECK(Bt(lay.index(1, 0), lay.index(0, 0)) == 0.5);
    CHECK(Bt.cwiseAbs().sum() == 0.5);
  }
  SUBCASE("round trip is exact") {
    std::mt19937_64 rng(1);
    const BlockEffectMatrix B = random_blocks(4, 3, rng, 1.0);
    const Eigen::MatrixXd Bt = embed(B, 5);
    const CoefficientLayout lay{4, 5, 3};
    for (int c = 0; c < lay.size(); ++c) {
      if (lay.slot_of(c) >= 3) {
        CHECK(Bt.row(c).isZero());
        CHECK(Bt.col(c).isZero());
      }
    }
    CHECK(extract_causal(Bt, 4, 3).B == B.B);
  }
  SUBCASE("S below K is rejected") {
    const BlockEffectMatrix B(2, 3);
    CHECK_THROWS_AS(embed(B, 2), InvalidConfiguration);
  }
}

TEST_CASE("coefficient layout") {
  const CoefficientLayout lay{3, 5, 2};
  std::vector<int> seen;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 5; ++k) {
      const int c = lay.index(j, k);
      CHECK(lay.node_of(c) == j);
      CHECK(lay.slot_of(c) == k);
      seen.push_back(c);
    }
  std::sort(seen.begin(), seen.end());
  for (int c = 0; c < 15; ++c) CHECK(seen[static_cast<std::size_t>(c)] == c);
  CHECK(lay.index(2, 1) == 5);  // causal part first
  CHECK(lay.index(0, 2) == 6);
}

TEST_CASE("stability check") {
  CHECK(stability_check(Eigen::MatrixXd::Zero(4, 4)));
  Eigen::MatrixXd two(2, 2);
  two << 0, 2, 2, 0;
  CHECK_FALSE(stability_check(two));
  Eigen::MatrixXd unit(2, 2);
  unit << 0, 1, 1, 0;
  CHECK_FALSE(stability_check(unit, 1e-6));
  Eigen::MatrixXd inside(2, 2);
  inside << 0, 1 - 2e-6, 1 - 2e-6, 0;
  CHECK(stability_check(inside, 1e-6));

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const BlockEffectMatrix B = random_blocks(3, 2, rng, 0.25 + 0.05 * trial);
    const double oracle = power_radius(B.B);
    CHECK(spectral_radius(B.B) == doctest::Approx(oracle).epsilon(1e-8));
    if (std::abs(oracle - 1.0) > 1e-3) CHECK(stability_check(B.B) == (oracle <= 1.0 - 1e-6));
  }
}

TEST_CASE("spectral radius of a 2-cycle where the default Schur iteration stalls") {
  Eigen::MatrixXd B(4, 4);
  B << 0, 0, 0.76058504125647264, 0.37774613914071081,  //
      0, 0, -0.46886598063890111, 0.8057067944326991,   //
      0.71912614700084498, -0.35973120192817865, 0, 0,  //
      0.53388357576769818, 0.71501490878140495, 0, 0;
  CHECK(spectral_radius(B) == doctest::Approx(power_radius(B)).epsilon(1e-8));
  CHECK(stability_check(B));
}

TEST_CASE("solve and residuals") {
  SUBCASE("zero effects") {
    const Eigen::VectorXd e = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    CHECK(solve_sem(Eigen::MatrixXd::Zero(5, 5), e) == e);
    CHECK(sem_residuals(Eigen::MatrixXd::Zero(5, 5), e) == e);
  }
  SUBCASE("hand-solved 2-cycle") {
    Eigen::MatrixXd B(2, 2);
    B << 0, 0.5, 0.5, 0;
    const Eigen::VectorXd a = solve_sem(B, Eigen::Vector2d(1, 1));
    CHECK(a[0] == doctest::Approx(2.0));
    CHECK(a[1] == doctest::Approx(2.0));
  }
  SUBCASE("round trips on random stable systems") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> N;
    int checked = 0;
    while (checked < 100) {
      const BlockEffectMatrix B = random_blocks(4, 2, rng, 0.3);
      if (!stability_check(B.B)) continue;
      const Eigen::MatrixXd Bt = embed(B, 3);
      Eigen::VectorXd e(Bt.rows());
      for (auto& v : e) v = N(rng);
      const Eigen::VectorXd a = solve_sem(Bt, e);
      const Eigen::VectorXd direct = a - Bt * a;
      CHECK(((Eigen::MatrixXd::Identity(Bt.rows(), Bt.rows()) - Bt) * a - e).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK((sem_residuals(Bt, a) - e).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK((sem_residuals(Bt, a) - direct).cwiseAbs().maxCoeff() == 0.0);
      ++checked;
    }
  }
  SUBCASE("singular system is reported") {
    Eigen::MatrixXd B(2, 2);
    B << 0, 1, 1, 0;
    CHECK_THROWS_AS(solve_sem(B, Eigen::Vector2d(1, 0)), SingularSystemError);
    CHECK_THROWS_AS(log_abs_det_i_minus(B), SingularSystemError);
  }
}

TEST_CASE("log determinant") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd B = random_matrix(6, rng, 0.2);
    const double direct = std::log(std::abs((Eigen::MatrixXd::Identity(6, 6) - B).determinant()));
    CHECK(log_abs_det_i_minus(B) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("latent log density") {
  SUBCASE("standard normal at zero") {
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    CHECK(latent_log_density(z, Eigen::MatrixXd::Zero(1, 1), z, Eigen::VectorXd::Ones(1)) ==
          doctest::Approx(-0.5 * std::log(2.0 * M_PI)));
  }
  SUBCASE("integrates to one in one dimension") {
    Eigen::MatrixXd B(1, 1);
    B << 0.4;  // acts like a self-scaling (1 - 0.4) on the single coordinate
    const Eigen::VectorXd M = Eigen::VectorXd::Constant(1, 0.3);
    const Eigen::VectorXd T = Eigen::VectorXd::Constant(1, 0.7);
    double total = 0.0;
    const double lo = -20.0, hi = 20.0;
    const int m = 40000;
    const double h = (hi - lo) / m;
    for (int u = 0; u <= m; ++u) {
      const double w = (u == 0 || u == m) ? 1.0 : (u % 2 == 1 ? 4.0 : 2.0);
      const Eigen::VectorXd a = Eigen::VectorXd::Constant(1, lo + u * h);
      total += w * std::exp(latent_log_density(a, B, M, T));
    }
    CHECK(total * h / 3.0 == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("zero effects factor into independent Gaussians") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> N;
    std::uniform_real_distribution<double> U(0.2, 2.0);
    Eigen::VectorXd a(6), M(6), T(6);
    for (int c = 0; c < 6; ++c) {
      a[c] = N(rng);
      M[c] = N(rng);
      T[c] = U(rng);
    }
    double sum = 0.0;
    for (int c = 0; c < 6; ++c) {
      sum += -0.5 * std::log(2.0 * M_PI * T[c]) - 0.5 * (a[c] - M[c]) * (a[c] - M[c]) / T[c];
    }
    CHECK(std::abs(latent_log_density(a, Eigen::MatrixXd::Zero(6, 6), M, T) - sum) <= 1e-10);
  }
  SUBCASE("matches a dense Gaussian with precision (I-B)^T T^-1 (I-B)") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> N;
    const int n = 5;
    const Eigen::MatrixXd B = random_matrix(n, rng, 0.2);
    Eigen::VectorXd a(n), M(n), T(n);
    for (int c = 0; c < n; ++c) {
      a[c] = N(rng);
      M[c] = N(rng);
      T[c] = 0.5 + std::abs(N(rng));
    }
    const Eigen::MatrixXd IB = Eigen::MatrixXd::Identity(n, n) - B;
    const Eigen::MatrixXd P = IB.transpose() * T.cwiseInverse().asDiagonal() * IB;
    const Eigen::VectorXd mean = IB.lu().solve(M);
    const Eigen::VectorXd d = a - mean;
    const double oracle =
        -0.5 * n * std::log(2.0 * M_PI) + 0.5 * std::log(P.determinant()) - 0.5 * d.dot(P * d);
    CHECK(latent_log_density(a, B, M, T) == doctest::Approx(oracle).epsilon(1e-10));
  }
  SUBCASE("invariant under node relabeling") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> N;
    const int p = 4, K = 2;
    const BlockEffectMatrix B = random_blocks(p, K, rng, 0.2);
    Eigen::VectorXd a(p * K), M(p * K), T(p * K);
    for (int c = 0; c < p * K; ++c) {
      a[c] = N(rng);
      M[c] = N(rng);
      T[c] = 0.5 + std::abs(N(rng));
    }
    std::vector<int> perm(p);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd Pm = Eigen::MatrixXd::Zero(p * K, p * K);
    for (int j = 0; j < p; ++j)
      for (int k = 0; k < K; ++k) Pm(perm[static_cast<std::size_t>(j)] * K + k, j * K + k) = 1.0;
    const Eigen::MatrixXd Bp = Pm * B.B * Pm.transpose();
    const double before = latent_log_density(a, B.B, M, T);
    const double after = latent_log_density(Pm * a, Bp, Pm * M, Pm * T);
    CHECK(after == doctest::Approx(before).epsilon(1e-12));
  }
  SUBCASE("nonpositive variance is rejected") {
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(latent_log_density(z, Eigen::MatrixXd::Zero(2, 2), z, Eigen::Vector2d(1.0, 0.0)), DomainError);
  }
}

TEST_CASE("hyperparameter validation") {
  Hyperparameters hp;
  CHECK_NOTHROW(hp.validate());
  CHECK(hp.spike == 0.02);
  CHECK(hp.a_gamma == 1.0);
  CHECK(hp.b_gamma == 1.0);
  CHECK(hp.a_mu == 0.0);
  CHECK(hp.b_mu == 100.0);
  CHECK(hp.a_sigma == 0.01);
  CHECK(hp.b_sigma == 0.01);
  CHECK(hp.dirichlet == 1.0);
  Hyperparameters bad = hp;
  bad.spike = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfiguration);
  bad = hp;
  bad.b_tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfiguration);
}
