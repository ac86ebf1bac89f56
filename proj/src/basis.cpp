#include "fence/basis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "fence/error.hpp"

namespace fence {

namespace {

constexpr int kDegree = SplineSystem::degree;

// Four-point Gauss-Legendre rule on [-1, 1]; exact for polynomials up to degree 7, which
// covers every product of two (transformed) cubic B-spline pieces.
constexpr std::array<double, 4> kGaussNodes = {-0.8611363115940526, -0.3399810435848563,
                                               0.3399810435848563, 0.8611363115940526};
constexpr std::array<double, 4> kGaussWeights = {0.3478548451374538, 0.6521451548625461,
                                                 0.6521451548625461, 0.3478548451374538};

void check_location(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("basis location " + std::to_string(t) + " outside [0, 1]");
  }
}

// Nonzero basis functions and their derivatives on one span (Piegl & Tiller, A2.3).
// ders[k][r] is the k-th derivative of basis function span - degree + r.
std::array<std::array<double, kDegree + 1>, 3> span_derivatives(const std::vector<double>& U, int span,
                                                                double u, int n) {
  constexpr int p = kDegree;
  std::array<std::array<double, p + 1>, p + 1> ndu{};
  std::array<double, p + 1> left{}, right{};
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - U[span + 1 - j];
    right[j] = U[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  std::array<std::array<double, p + 1>, 3> ders{};
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];
  std::array<std::array<double, p + 1>, 2> a{};
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= n; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n; ++k) {
    for (int j = 0; j <= p; ++j) ders[k][j] *= factor;
    factor *= (p - k);
  }
  return ders;
}

// Integrates f(t) f(t)^T over [0, 1], exactly for piecewise polynomials of degree <= 3
// between knots.
template <typename F>
Eigen::MatrixXd integrate_outer(const SplineSystem& sys, int dim, F&& f) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, dim);
  for (int s = kDegree; s < sys.R; ++s) {
    const double lo = sys.knots[s], hi = sys.knots[s + 1];
    if (hi <= lo) continue;
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    for (std::size_t g = 0; g < kGaussNodes.size(); ++g) {
      const Eigen::VectorXd v = f(mid + half * kGaussNodes[g]);
      out.noalias() += (half * kGaussWeights[g]) * v * v.transpose();
    }
  }
  return 0.5 * (out + out.transpose());
}

}  // namespace

int SplineSystem::span_index(double t) const {
  if (t >= 1.0) return R - 1;
  const auto it = std::upper_bound(knots.begin() + kDegree, knots.begin() + R, t);
  return static_cast<int>(it - knots.begin()) - 1;
}

Eigen::VectorXd SplineSystem::derivative(double t, int order) const {
  check_location(t);
  if (order < 0 || order > 2) throw InvalidConfiguration("spline derivative order must be 0, 1 or 2");
  const int span = span_index(t);
  const auto ders = span_derivatives(knots, span, t, order);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(R);
  for (int r = 0; r <= kDegree; ++r) out[span - kDegree + r] = ders[order][r];
  return out;
}

Eigen::VectorXd SplineSystem::evaluate(double t) const { return derivative(t, 0); }

SplineSystem build_spline_system(int R, int grid_resolution) {
  if (R < 6) throw InvalidConfiguration("spline system needs R >= 6, got " + std::to_string(R));
  if (grid_resolution < 2) throw InvalidConfiguration("grid resolution must be at least 2");
  SplineSystem sys;
  sys.R = R;
  const int interior = R - kDegree - 1;
  sys.knots.assign(kDegree + 1, 0.0);
  for (int i = 1; i <= interior; ++i) sys.knots.push_back(static_cast<double>(i) / (interior + 1));
  sys.knots.insert(sys.knots.end(), kDegree + 1, 1.0);
  sys.grid.resize(static_cast<std::size_t>(grid_resolution));
  for (int g = 0; g < grid_resolution; ++g) sys.grid[g] = static_cast<double>(g) / (grid_resolution - 1);
  sys.grid_design = evaluate_design(sys, sys.grid);
  return sys;
}

PenaltyMatrix penalty_matrix(const SplineSystem& sys) {
  return {integrate_outer(sys, sys.R, [&](double t) { return sys.derivative(t, 2); })};
}

Eigen::VectorXd ReparamSystem::evaluate(double t) const {
  const Eigen::VectorXd b = splines.evaluate(t);
  Eigen::VectorXd out(splines.R);
  out[0] = 1.0;
  out[1] = t;
  out.tail(splines.R - 2).noalias() = nonlinear_map.transpose() * b;
  return out;
}

ReparamSystem reparameterize(const PenaltyMatrix& penalty, const SplineSystem& sys) {
  const int R = sys.R;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(penalty.omega);
  if (eig.info() != Eigen::Success) throw NumericalError("eigen-decomposition of the penalty failed");
  const Eigen::VectorXd values = eig.eigenvalues();  // ascending
  const double top = values.cwiseAbs().maxCoeff();
  int rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) rank += values[i] > 1e-10 * top ? 1 : 0;
  if (rank != R - 2) {
    throw NumericalRankError("penalty rank " + std::to_string(rank) + ", expected " + std::to_string(R - 2));
  }
  ReparamSystem out;
  out.splines = sys;
  out.U_tilde.resize(R, R - 2);
  out.D_tilde.resize(R - 2);
  for (int c = 0; c < R - 2; ++c) {
    const int src = R - 1 - c;  // descending order
    out.U_tilde.col(c) = eig.eigenvectors().col(src);
    out.D_tilde[c] = values[src];
  }
  out.nonlinear_map = out.U_tilde * out.D_tilde.cwiseSqrt().cwiseInverse().asDiagonal();
  out.J = integrate_outer(sys, R, [&](double t) { return out.evaluate(t); });
  if (Eigen::LLT<Eigen::MatrixXd>(out.J).info() != Eigen::Success) {
    throw NumericalError("Gram matrix of the transformed basis is not positive definite");
  }
  return out;
}

ReparamSystem build_reparam_system(int R) {
  const SplineSystem sys = build_spline_system(R);
  return reparameterize(penalty_matrix(sys), sys);
}

Eigen::MatrixXd evaluate_design(const SplineSystem& sys, std::span<const double> locations) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(locations.size()), sys.R);
  for (std::size_t u = 0; u < locations.size(); ++u) {
    out.row(static_cast<Eigen::Index>(u)) = sys.evaluate(locations[u]).transpose();
  }
  return out;
}

Eigen::MatrixXd evaluate_design(const ReparamSystem& sys, std::span<const double> locations) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(locations.size()), sys.R());
  for (std::size_t u = 0; u < locations.size(); ++u) {
    out.row(static_cast<Eigen::Index>(u)) = sys.evaluate(locations[u]).transpose();
  }
  return out;
}

Eigen::VectorXd coefficient_prior_precision(int R, double lambda) {
  Eigen::VectorXd d = Eigen::VectorXd::Constant(R, lambda);
  d[0] = d[1] = 1.0 / kUnpenalizedVariance;
  return d;
}

double orthonormality_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& J) {
  const Eigen::MatrixXd G = A.transpose() * J * A;
  return (G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
}

Eigen::VectorXd orthogonal_project(const Eigen::VectorXd& unconstrained, const Eigen::MatrixXd& others,
                                   const Eigen::MatrixXd& Q, const Eigen::MatrixXd& J) {
  if (others.cols() == 0) return unconstrained;
  const Eigen::MatrixXd P = J * others;
  const Eigen::MatrixXd QP = Q * P;
  const Eigen::MatrixXd inner = P.transpose() * QP;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(inner);
  const double scale = inner.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(scale > 0.0) ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-14 * scale) {
    throw DegenerateBasisError("projection matrix P^T Q P is singular");
  }
  Eigen::VectorXd out = unconstrained - QP * ldlt.solve(P.transpose() * unconstrained);
  // one refinement pass against round-off in the constraint
  const Eigen::VectorXd slack = P.transpose() * out;
  out -= QP * ldlt.solve(slack);
  return out;
}

Eigen::VectorXd normalize(const Eigen::VectorXd& a, const Eigen::MatrixXd& J) {
  const double norm2 = a.dot(J * a);
  if (!(norm2 > 0.0) || std::sqrt(norm2) < 1e-12) throw DegenerateBasisError("basis vector has vanishing J-norm");
  return a / std::sqrt(norm2);
}

}  // namespace fence
