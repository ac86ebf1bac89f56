#include "fence/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "fence/error.hpp"

namespace fence {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ (substream * 0x632be59bd9b4e019ULL));
}

double draw_uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double draw_normal(Rng& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

double draw_gamma(Rng& rng, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw DomainError("gamma draw requires positive shape and rate");
  }
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

double draw_inverse_gamma(Rng& rng, double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0)) {
    throw DomainError("inverse-gamma draw requires positive shape and scale");
  }
  // 1/x for x ~ Gamma(shape, rate = scale)
  const double g = std::gamma_distribution<double>(shape, 1.0 / scale)(rng);
  return 1.0 / std::max(g, std::numeric_limits<double>::min());
}

double draw_beta(Rng& rng, double a, double b) {
  const double x = draw_gamma(rng, a, 1.0);
  const double y = draw_gamma(rng, b, 1.0);
  if (x + y <= 0.0) {
    return draw_uniform(rng) < a / (a + b) ? 1.0 : 0.0;
  }
  return x / (x + y);
}

Eigen::VectorXd draw_dirichlet(Rng& rng, std::span<const double> concentration) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(concentration.size()));
  double total = 0.0;
  for (std::size_t m = 0; m < concentration.size(); ++m) {
    w[static_cast<Eigen::Index>(m)] = draw_gamma(rng, concentration[m], 1.0);
    total += w[static_cast<Eigen::Index>(m)];
  }
  if (total <= 0.0) {
    // every gamma draw underflowed (tiny concentrations); fall back to a vertex
    w.setZero();
    w[static_cast<Eigen::Index>(draw_categorical_log(rng, std::vector<double>(concentration.size(), 0.0)))] = 1.0;
    return w;
  }
  return w / total;
}

int draw_categorical_log(Rng& rng, std::span<const double> log_weights) {
  const double top = *std::max_element(log_weights.begin(), log_weights.end());
  if (!std::isfinite(top)) {
    // all weights are -inf or NaN: fall back to the arg-max
    return static_cast<int>(std::max_element(log_weights.begin(), log_weights.end()) - log_weights.begin());
  }
  double total = 0.0;
  for (double lw : log_weights) total += std::exp(lw - top);
  double u = draw_uniform(rng) * total;
  for (std::size_t m = 0; m < log_weights.size(); ++m) {
    u -= std::exp(log_weights[m] - top);
    if (u <= 0.0) return static_cast<int>(m);
  }
  return static_cast<int>(log_weights.size()) - 1;
}

double gamma_cdf(double x, double shape, double rate) {
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return boost::math::gamma_p(shape, rate * x);
}

std::optional<double> draw_truncated_gamma(Rng& rng, double shape, double rate, double lower,
                                           double upper) {
  if (!(shape > 0.0) || !(rate > 0.0) || !(upper > lower)) return std::nullopt;
  const double u = draw_uniform(rng);
  double x = 0.0;
  try {
    const double p_lo = gamma_cdf(lower, shape, rate);
    if (p_lo < 0.5) {
      const double p_hi = gamma_cdf(upper, shape, rate);
      if (!(p_hi > p_lo)) return std::nullopt;
      const double p = p_lo + u * (p_hi - p_lo);
      if (p <= 0.0) return lower;
      x = boost::math::gamma_p_inv(shape, p) / rate;
    } else {
      // work in the upper tail so that probabilities near one keep their precision
      const double q_lo = boost::math::gamma_q(shape, rate * lower);
      const double q_hi = std::isinf(upper) ? 0.0 : boost::math::gamma_q(shape, rate * upper);
      if (!(q_lo > q_hi)) return std::nullopt;
      const double q = q_lo - u * (q_lo - q_hi);
      if (q <= 0.0) return upper;
      x = boost::math::gamma_q_inv(shape, q) / rate;
    }
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (!std::isfinite(x)) return std::nullopt;
  return std::clamp(x, lower, upper);
}

Eigen::VectorXd draw_gaussian_canonical(Rng& rng, const Eigen::LLT<Eigen::MatrixXd>& precision_chol,
                                        const Eigen::VectorXd& b) {
  Eigen::VectorXd mean = precision_chol.solve(b);
  Eigen::VectorXd z(b.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = draw_normal(rng);
  // precision = L L^T, so L^{-T} z has covariance precision^{-1}
  mean += precision_chol.matrixU().solve(z);
  return mean;
}

Eigen::VectorXd draw_gaussian(Rng& rng, const Eigen::VectorXd& mean,
                              const Eigen::LLT<Eigen::MatrixXd>& covariance_chol) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = draw_normal(rng);
  return mean + covariance_chol.matrixL() * z;
}

}  // namespace fence
