#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace fence {

/// Clamped cubic B-spline system on [0, 1] with equally spaced interior knots.
struct SplineSystem {
  static constexpr int degree = 3;
  int R = 0;                   ///< number of basis functions
  std::vector<double> knots;   ///< R + 4 knots, first and last four at 0 and 1
  std::vector<double> grid;    ///< cached uniform evaluation grid
  Eigen::MatrixXd grid_design; ///< basis evaluated on `grid` (|grid| x R)

  /// Basis values at t (length R). t must lie in [0, 1].
  Eigen::VectorXd evaluate(double t) const;
  /// Derivative of the given order (0, 1 or 2) of every basis function at t.
  Eigen::VectorXd derivative(double t, int order) const;
  /// Index of the knot span containing t (degree <= span < R).
  int span_index(double t) const;
};

SplineSystem build_spline_system(int R, int grid_resolution = 101);

/// Omega = int b''(t) b''(t)^T dt.
struct PenaltyMatrix {
  Eigen::MatrixXd omega;
};

PenaltyMatrix penalty_matrix(const SplineSystem& sys);

/// Reparametrized basis  b~(t) = (1, t, b(t)^T U~ D~^{-1/2})  in which the roughness
/// penalty is the identity on the nonlinear block and zero on the affine block.
struct ReparamSystem {
  SplineSystem splines;
  Eigen::MatrixXd U_tilde;        ///< R x (R-2) eigenvectors of Omega with nonzero eigenvalues
  Eigen::VectorXd D_tilde;        ///< nonzero eigenvalues of Omega, descending
  Eigen::MatrixXd nonlinear_map;  ///< U~ D~^{-1/2}
  Eigen::MatrixXd J;              ///< Gram matrix int b~ b~^T

  int R() const { return splines.R; }
  Eigen::VectorXd evaluate(double t) const;
};

ReparamSystem reparameterize(const PenaltyMatrix& penalty, const SplineSystem& sys);

/// Convenience: build_spline_system + penalty_matrix + reparameterize.
ReparamSystem build_reparam_system(int R);

/// Rows are the basis evaluated at each location. Locations must lie in [0, 1].
Eigen::MatrixXd evaluate_design(const SplineSystem& sys, std::span<const double> locations);
Eigen::MatrixXd evaluate_design(const ReparamSystem& sys, std::span<const double> locations);

/// Prior variance given to the unpenalized intercept and slope coefficients.
inline constexpr double kUnpenalizedVariance = 1e8;
inline constexpr double kSmoothnessLower = 1e-8;
inline constexpr double kSmoothnessUpper = 1e8;

/// Diagonal of S_k^{-1}: (1e-8, 1e-8, lambda, ..., lambda).
Eigen::VectorXd coefficient_prior_precision(int R, double lambda);

/// Learned basis: column k of A holds the transformed spline coefficients of phi_k.
struct BasisState {
  Eigen::MatrixXd A;       ///< R x S
  Eigen::VectorXd lambda;  ///< S smoothness scales, strictly decreasing

  int S() const { return static_cast<int>(A.cols()); }
};

/// max |A^T J A - I|
double orthonormality_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& J);

/// Conditional-on-constraint projection: removes from `unconstrained` the component that is
/// J-correlated with the columns of `others`, using covariance Q as the metric.
Eigen::VectorXd orthogonal_project(const Eigen::VectorXd& unconstrained, const Eigen::MatrixXd& others,
                                   const Eigen::MatrixXd& Q, const Eigen::MatrixXd& J);

/// Rescales to unit J-norm.
Eigen::VectorXd normalize(const Eigen::VectorXd& a, const Eigen::MatrixXd& J);

}  // namespace fence
