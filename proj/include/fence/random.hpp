#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace fence {

using Rng = std::mt19937_64;

/// Mixes a base seed with stream identifiers (splitmix64 finalizer). Used to give
/// replicates and workers independent, reproducible substreams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0);

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0) {
  return Rng(derive_seed(seed, stream, substream));
}

double draw_uniform(Rng& rng);
double draw_normal(Rng& rng, double mean = 0.0, double sd = 1.0);
/// Gamma with shape/rate parametrization.
double draw_gamma(Rng& rng, double shape, double rate);
/// Inverse-gamma IG(shape, scale): density proportional to x^{-shape-1} exp(-scale/x).
double draw_inverse_gamma(Rng& rng, double shape, double scale);
double draw_beta(Rng& rng, double a, double b);
Eigen::VectorXd draw_dirichlet(Rng& rng, std::span<const double> concentration);

/// Categorical draw from unnormalized log weights. Returns a 0-based index.
/// Computed with max-subtraction, so it never underflows to an all-zero vector.
int draw_categorical_log(Rng& rng, std::span<const double> log_weights);

/// Inverse-CDF draw from Gamma(shape, rate) truncated to (lower, upper).
/// Returns nullopt when the truncation interval carries no representable mass.
std::optional<double> draw_truncated_gamma(Rng& rng, double shape, double rate, double lower,
                                           double upper);

/// Regularized lower incomplete gamma P(shape, rate * x): the Gamma(shape, rate) CDF.
double gamma_cdf(double x, double shape, double rate);

/// Draw from N(precision^{-1} b, precision^{-1}) given the Cholesky factor of the precision.
Eigen::VectorXd draw_gaussian_canonical(Rng& rng, const Eigen::LLT<Eigen::MatrixXd>& precision_chol,
                                        const Eigen::VectorXd& b);

/// Draw from N(mean, covariance) given the Cholesky factor of the covariance.
Eigen::VectorXd draw_gaussian(Rng& rng, const Eigen::VectorXd& mean,
                              const Eigen::LLT<Eigen::MatrixXd>& covariance_chol);

}  // namespace fence
