#include "fence/model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "fence/error.hpp"

namespace fence {

CyclicGraph::CyclicGraph(int p) : p_(p), adj_(static_cast<std::size_t>(p * p), 0) {
  if (p < 0) throw InvalidConfiguration("graph size must be non-negative");
}

void CyclicGraph::set_edge(int j, int l, bool present) {
  if (j == l && present) throw DomainError("self-loops are not allowed");
  adj_[static_cast<std::size_t>(j * p_ + l)] = present ? 1 : 0;
}

int CyclicGraph::edge_count() const {
  int count = 0;
  for (auto v : adj_) count += v;
  return count;
}

Eigen::MatrixXd CyclicGraph::to_matrix() const {
  Eigen::MatrixXd out(p_, p_);
  for (int j = 0; j < p_; ++j)
    for (int l = 0; l < p_; ++l) out(j, l) = edge(j, l) ? 1.0 : 0.0;
  return out;
}

Eigen::MatrixXd embed(const BlockEffectMatrix& B, int S) {
  if (S < B.K) throw InvalidConfiguration("S must be at least K");
  const int n = B.p * S;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  out.topLeftCorner(B.p * B.K, B.p * B.K) = B.B;
  return out;
}

BlockEffectMatrix extract_causal(const Eigen::MatrixXd& B_tilde, int p, int K) {
  BlockEffectMatrix out(p, K);
  out.B = B_tilde.topLeftCorner(p * K, p * K);
  return out;
}

double spectral_radius(const Eigen::MatrixXd& B) {
  if (B.rows() != B.cols()) throw DomainError("spectral radius of a non-square matrix");
  if (B.rows() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(B, false);
  if (solver.info() == Eigen::Success) return solver.eigenvalues().cwiseAbs().maxCoeff();
  // The real Schur iteration can stall on block anti-diagonal matrices (a 2-cycle); retry with a
  // larger iteration budget, then in complex arithmetic.
  Eigen::RealSchur<Eigen::MatrixXd> schur(B.rows());
  schur.setMaxIterations(100 * B.rows() * 40);
  schur.compute(B, false);
  if (schur.info() == Eigen::Success) {
    const Eigen::MatrixXd& T = schur.matrixT();
    double radius = 0.0;
    for (Eigen::Index i = 0; i < T.rows();) {
      if (i + 1 < T.rows() && T(i + 1, i) != 0.0) {
        radius = std::max(radius, std::sqrt(std::abs(T.block(i, i, 2, 2).determinant())));
        i += 2;
      } else {
        radius = std::max(radius, std::abs(T(i, i)));
        ++i;
      }
    }
    return radius;
  }
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> complex(B.cast<std::complex<double>>(), false);
  if (complex.info() != Eigen::Success) throw NumericalError("eigenvalue computation failed");
  return complex.eigenvalues().cwiseAbs().maxCoeff();
}

bool stability_check(const Eigen::MatrixXd& B, double tol) {
  if (B.rows() != B.cols()) throw DomainError("stability check needs a square matrix");
  const double bound = 1.0 - tol;
  // any induced norm bounds the spectral radius
  const double row_norm = B.cwiseAbs().rowwise().sum().maxCoeff();
  const double col_norm = B.cwiseAbs().colwise().sum().maxCoeff();
  if (B.rows() == 0 || std::min(row_norm, col_norm) <= bound) return true;
  return spectral_radius(B) <= bound;
}

Eigen::VectorXd solve_sem(const Eigen::MatrixXd& B_tilde, const Eigen::VectorXd& eps) {
  const Eigen::Index n = B_tilde.rows();
  if (B_tilde.cols() != n || eps.size() != n) throw DomainError("solve_sem dimension mismatch");
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - B_tilde;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw SingularSystemError("I - B is singular");
  Eigen::VectorXd alpha = lu.solve(eps);
  alpha += lu.solve(eps - A * alpha);  // iterative refinement
  return alpha;
}

Eigen::VectorXd sem_residuals(const Eigen::MatrixXd& B_tilde, const Eigen::VectorXd& alpha) {
  if (B_tilde.rows() != alpha.size() || B_tilde.cols() != alpha.size()) {
    throw DomainError("sem_residuals dimension mismatch");
  }
  return alpha - B_tilde * alpha;
}

double log_abs_det_i_minus(const Eigen::MatrixXd& B) {
  const Eigen::Index n = B.rows();
  if (n == 0) return 0.0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - B);
  const Eigen::MatrixXd& LU = lu.matrixLU();
  double out = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = std::abs(LU(i, i));
    if (!(d > 0.0)) throw SingularSystemError("I - B is singular");
    out += std::log(d);
  }
  return out;
}

double latent_log_density(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& B_tilde,
                          const Eigen::VectorXd& M, const Eigen::VectorXd& T) {
  const Eigen::Index n = alpha.size();
  if (B_tilde.rows() != n || M.size() != n || T.size() != n) {
    throw DomainError("latent_log_density dimension mismatch");
  }
  if (!(T.minCoeff() > 0.0)) throw DomainError("latent variances must be positive");
  const Eigen::VectorXd r = alpha - B_tilde * alpha - M;
  const double quad = (r.array().square() / T.array()).sum();
  const double log_det_precision = -T.array().log().sum() + 2.0 * log_abs_det_i_minus(B_tilde);
  return -0.5 * quad + 0.5 * log_det_precision -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

void Hyperparameters::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw InvalidConfiguration(std::string(name) + " must be positive");
  };
  positive(a_gamma, "a_gamma");
  positive(b_gamma, "b_gamma");
  positive(b_mu, "b_mu");
  positive(a_tau, "a_tau");
  positive(b_tau, "b_tau");
  positive(a_sigma, "a_sigma");
  positive(b_sigma, "b_sigma");
  positive(dirichlet, "dirichlet");
  positive(a_rho, "a_rho");
  positive(b_rho, "b_rho");
  if (!(spike > 0.0 && spike < 1.0)) throw InvalidConfiguration("spike must lie in (0, 1)");
  if (!std::isfinite(a_mu)) throw InvalidConfiguration("a_mu must be finite");
}

}  // namespace fence
