#include "fence/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "fence/error.hpp"

namespace fence {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

std::vector<int> node_indices(const CoefficientLayout& lay, int j) {
  std::vector<int> idx(static_cast<std::size_t>(lay.S));
  for (int k = 0; k < lay.S; ++k) idx[static_cast<std::size_t>(k)] = lay.index(j, k);
  return idx;
}

Eigen::VectorXd node_coefficients(const ChainState& s, int i, int j) {
  const CoefficientLayout lay = s.layout();
  Eigen::VectorXd a(s.S);
  for (int k = 0; k < s.S; ++k) a[k] = s.alpha(lay.index(j, k), i);
  return a;
}

/// Log density of a K x K matrix-normal N(center, v I, I).
double log_matrix_normal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& center, double v) {
  const double K2 = static_cast<double>(X.size());
  return -0.5 * K2 * (kLog2Pi + std::log(v)) - 0.5 * (X - center).squaredNorm() / v;
}

/// Sum over replicates of the quadratic part of the latent log density restricted to the causal
/// rows of node j, with block (j, l) replaced by `block`. Other rows do not change.
double node_quadratic(const ChainState& s, int j, int l, const Eigen::MatrixXd& block) {
  const int K = s.K;
  double quad = 0.0;
  for (int i = 0; i < s.n; ++i) {
    for (int a = 0; a < K; ++a) {
      const int row = j * K + a;
      double r = s.alpha(row, i);
      for (int c = 0; c < s.p * K; ++c) {
        const int from = c / K;
        const double b = from == l ? block(a, c % K) : s.B.B(row, c);
        r -= b * s.alpha(c, i);
      }
      const int lab = s.labels(row, i);
      r -= s.mix.mean(row, lab);
      quad += r * r / s.mix.var(row, lab);
    }
  }
  return quad;
}

Eigen::MatrixXd with_block(const BlockEffectMatrix& B, int j, int l, const Eigen::MatrixXd& block) {
  Eigen::MatrixXd out = B.B;
  out.block(j * B.K, l * B.K, B.K, B.K) = block;
  return out;
}

bool stable_with_block(const ChainState& s, int j, int l, const Eigen::MatrixXd& block, double tol) {
  return stability_check(with_block(s.B, j, l, block), tol);
}

/// J-orthonormalize the columns in place (two Gram-Schmidt passes).
void j_orthonormalize(Eigen::MatrixXd& A, const Eigen::MatrixXd& J) {
  for (int k = 0; k < A.cols(); ++k) {
    for (int pass = 0; pass < 2; ++pass)
      for (int h = 0; h < k; ++h) A.col(k) -= A.col(h).dot(J * A.col(k)) * A.col(h);
    A.col(k) = normalize(A.col(k), J);
  }
}

/// Linear interpolation with constant extrapolation; t sorted ascending.
double interpolate(const std::vector<double>& t, const std::vector<double>& x, double at) {
  if (at <= t.front()) return x.front();
  if (at >= t.back()) return x.back();
  const auto it = std::upper_bound(t.begin(), t.end(), at);
  const std::size_t hi = static_cast<std::size_t>(it - t.begin());
  const std::size_t lo = hi - 1;
  const double w = (at - t[lo]) / (t[hi] - t[lo]);
  return (1.0 - w) * x[lo] + w * x[hi];
}

}  // namespace

MhMode parse_mh_mode(std::string_view s) {
  if (s == "standard") return MhMode::standard;
  if (s == "as_printed" || s == "as-printed") return MhMode::as_printed;
  throw InvalidConfiguration("unknown mh_mode '" + std::string(s) + "'");
}

InstabilityPolicy parse_instability_policy(std::string_view s) {
  if (s == "redraw") return InstabilityPolicy::redraw;
  if (s == "reject") return InstabilityPolicy::reject;
  throw InvalidConfiguration("unknown instability policy '" + std::string(s) + "'");
}

EffectScaleMode parse_effect_scale_mode(std::string_view s) {
  if (s == "full") return EffectScaleMode::full;
  if (s == "slab_only") return EffectScaleMode::slab_only;
  throw InvalidConfiguration("unknown effect_scale mode '" + std::string(s) + "'");
}

BasisInit parse_basis_init(std::string_view s) {
  if (s == "fpca") return BasisInit::fpca;
  if (s == "random") return BasisInit::random;
  throw InvalidConfiguration("unknown init_basis '" + std::string(s) + "'");
}

std::string to_string(MhMode m) { return m == MhMode::standard ? "standard" : "as_printed"; }
std::string to_string(InstabilityPolicy m) { return m == InstabilityPolicy::redraw ? "redraw" : "reject"; }
std::string to_string(EffectScaleMode m) { return m == EffectScaleMode::full ? "full" : "slab_only"; }
std::string to_string(BasisInit m) { return m == BasisInit::fpca ? "fpca" : "random"; }

GraphProposal parse_graph_proposal(std::string_view s) {
  if (s == "conditional") return GraphProposal::conditional;
  if (s == "random_walk" || s == "random-walk") return GraphProposal::random_walk;
  throw InvalidConfiguration("unknown graph_proposal '" + std::string(s) + "'");
}

std::string to_string(GraphProposal m) { return m == GraphProposal::conditional ? "conditional" : "random_walk"; }

void ChainConfig::validate() const {
  if (iterations < 1) throw InvalidConfiguration("iterations must be at least 1");
  if (burn_in < 0 || burn_in >= iterations) throw InvalidConfiguration("need 0 <= burn_in < iterations");
  if (thin < 1) throw InvalidConfiguration("thin must be at least 1");
  if (M < 1) throw InvalidConfiguration("M must be at least 1");
  if (R < 6) throw InvalidConfiguration("R must be at least 6");
  if (S < 1 || S > R) throw InvalidConfiguration("need 1 <= S <= R");
  if (K < 0 || K > R) throw InvalidConfiguration("need 0 <= K <= R (0 selects K from the data)");
  if (!(z > 0.0)) throw InvalidConfiguration("z must be positive");
  if (!(target_acceptance >= 0.2 && target_acceptance <= 0.4)) {
    throw InvalidConfiguration("target_acceptance must lie in [0.2, 0.4]");
  }
  if (adapt_interval < 1) throw InvalidConfiguration("adapt_interval must be at least 1");
  if (!(stability_tol > 0.0 && stability_tol < 1.0)) throw InvalidConfiguration("stability_tol must lie in (0, 1)");
  if (max_redraws < 1) throw InvalidConfiguration("max_redraws must be at least 1");
  if (!(det_anneal >= 0.0 && det_anneal <= 1.0)) throw InvalidConfiguration("det_anneal must lie in [0, 1]");
  if (warm_start_sweeps < 0) throw InvalidConfiguration("warm_start_sweeps must be non-negative");
  if (threads < 1) throw InvalidConfiguration("threads must be at least 1");
  hyper.validate();
}

Eigen::MatrixXd ChainState::residuals() const {
  Eigen::MatrixXd eps = alpha;
  const int pK = p * K;
  if (pK > 0) eps.topRows(pK) -= B.B * alpha.topRows(pK);
  return eps;
}

SufficientStats build_sufficient_stats(const FunctionalDataset& data, const ReparamSystem& sys) {
  SufficientStats st;
  st.n = data.n();
  st.p = data.p();
  st.R = sys.R();
  st.G.resize(static_cast<std::size_t>(st.n * st.p));
  st.h.resize(static_cast<std::size_t>(st.n * st.p));
  st.xx = Eigen::MatrixXd::Zero(st.n, st.p);
  st.count = Eigen::MatrixXi::Zero(st.n, st.p);
  for (int i = 0; i < st.n; ++i) {
    for (int j = 0; j < st.p; ++j) {
      const Curve& c = data.curve(i, j);
      const Eigen::MatrixXd Phi = evaluate_design(sys, c.t);
      const Eigen::Map<const Eigen::VectorXd> x(c.x.data(), static_cast<Eigen::Index>(c.x.size()));
      const std::size_t at = static_cast<std::size_t>(i * st.p + j);
      st.G[at] = Phi.transpose() * Phi;
      st.h[at] = Phi.transpose() * x;
      st.xx(i, j) = x.squaredNorm();
      st.count(i, j) = static_cast<int>(c.t.size());
    }
  }
  return st;
}

int select_K_from_singular_values(std::span<const double> singular_values, double share) {
  if (singular_values.empty()) throw InputError("no singular values");
  std::vector<double> sq;
  for (double v : singular_values) sq.push_back(v * v);
  std::sort(sq.begin(), sq.end(), std::greater<>());
  double total = 0.0;
  for (double v : sq) total += v;
  if (!(total > 0.0)) return 1;
  double cum = 0.0;
  for (std::size_t k = 0; k < sq.size(); ++k) {
    cum += sq[k];
    if (cum / total >= share * (1.0 - 1e-12)) return static_cast<int>(k + 1);
  }
  return static_cast<int>(sq.size());
}

int select_K(const FunctionalDataset& data) {
  std::vector<double> grid;
  for (int i = 0; i < data.n(); ++i)
    for (int j = 0; j < data.p(); ++j) {
      const auto& t = data.curve(i, j).t;
      grid.insert(grid.end(), t.begin(), t.end());
    }
  if (grid.empty()) throw InputError("cannot select K from a dataset without measurements");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const Eigen::Index d = static_cast<Eigen::Index>(grid.size());

  std::vector<Eigen::VectorXd> rows;
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.p(); ++j) {
      const Curve& c = data.curve(i, j);
      if (c.t.empty()) continue;
      std::vector<std::size_t> order(c.t.size());
      for (std::size_t u = 0; u < order.size(); ++u) order[u] = u;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c.t[a] < c.t[b]; });
      std::vector<double> t, x;
      for (std::size_t u : order) {
        if (!t.empty() && c.t[u] == t.back()) continue;  // duplicate location: keep the first value
        t.push_back(c.t[u]);
        x.push_back(c.x[u]);
      }
      Eigen::VectorXd row(d);
      for (Eigen::Index u = 0; u < d; ++u) row[u] = interpolate(t, x, grid[static_cast<std::size_t>(u)]);
      rows.push_back(std::move(row));
    }
  }
  const Eigen::Index N = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd X(N, d);
  for (Eigen::Index r = 0; r < N; ++r) X.row(r) = rows[static_cast<std::size_t>(r)].transpose();
  // squared singular values are the eigenvalues of the smaller Gram matrix
  const Eigen::MatrixXd gram = N <= d ? Eigen::MatrixXd(X * X.transpose()) : Eigen::MatrixXd(X.transpose() * X);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("eigen-decomposition failed in K selection");
  std::vector<double> sv;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) sv.push_back(std::sqrt(std::max(0.0, es.eigenvalues()[k])));
  return select_K_from_singular_values(sv);
}

ChainState init_state(const FunctionalDataset& data, const ReparamSystem& sys, const SufficientStats& stats,
                      const ChainConfig& cfg, int K, Rng& rng) {
  ChainState s;
  s.n = data.n();
  s.p = data.p();
  s.K = K;
  s.S = std::max(cfg.S, K);
  s.R = sys.R();
  s.M = cfg.M;
  if (s.S > s.R) throw InvalidConfiguration("S (after S = max(S, K)) exceeds R");
  const Hyperparameters& hp = cfg.hyper;
  const CoefficientLayout lay = s.layout();
  const Eigen::MatrixXd& J = sys.J;

  s.E = CyclicGraph(s.p);
  s.gamma = hp.b_gamma / (hp.a_gamma + 1.0);
  s.rho = draw_beta(rng, hp.a_rho, hp.b_rho);
  s.B = BlockEffectMatrix(s.p, K);
  const double spike_sd = std::sqrt(hp.spike * s.gamma);
  for (int j = 0; j < s.p; ++j)
    for (int l = 0; l < s.p; ++l) {
      if (j == l) continue;
      auto blk = s.B.block(j, l);
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) blk(a, b) = draw_normal(rng, 0.0, spike_sd);
    }
  while (!stability_check(s.B.B, cfg.stability_tol)) s.B.B *= 0.5;

  s.basis.lambda.resize(s.S);
  for (int k = 0; k < s.S; ++k) {
    s.basis.lambda[k] = s.S == 1 ? 1.0 : std::pow(10.0, 4.0 - 8.0 * k / (s.S - 1));
  }

  // basis: J-weighted principal components of ridge-projected curves, padded with random directions
  Eigen::MatrixXd A(s.R, 0);
  if (cfg.init_basis == BasisInit::fpca && stats.count.sum() > 0) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(s.R, s.R);
    int curves = 0;
    for (int i = 0; i < s.n; ++i)
      for (int j = 0; j < s.p; ++j) {
        const int m = stats.count(i, j);
        if (m == 0) continue;
        const Eigen::MatrixXd P = stats.gram(i, j) + 1e-6 * m * J;
        const Eigen::VectorXd c = P.ldlt().solve(stats.cross(i, j));
        cov += c * c.transpose();
        ++curves;
      }
    cov /= curves;
    const Eigen::LLT<Eigen::MatrixXd> chol(J);
    const Eigen::MatrixXd L = chol.matrixL();
    const Eigen::MatrixXd W = L.transpose() * cov * L;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (W + W.transpose()));
    if (es.info() != Eigen::Success) throw NumericalError("eigen-decomposition failed in basis initialization");
    A.resize(s.R, s.S);
    for (int k = 0; k < s.S; ++k) {
      const Eigen::VectorXd w = es.eigenvectors().col(s.R - 1 - k);
      A.col(k) = L.transpose().triangularView<Eigen::Upper>().solve(w);
    }
    j_orthonormalize(A, J);
  } else {
    A.resize(s.R, s.S);
    for (int r = 0; r < s.R; ++r)
      for (int k = 0; k < s.S; ++k) A(r, k) = draw_normal(rng);
    j_orthonormalize(A, J);
  }
  s.basis.A = A;

  // latent coefficients by ridge regression on the initial design
  s.alpha = Eigen::MatrixXd::Zero(lay.size(), s.n);
  Eigen::VectorXd ssr = Eigen::VectorXd::Zero(s.p);
  Eigen::VectorXd xx = Eigen::VectorXd::Zero(s.p);
  Eigen::VectorXi cnt = Eigen::VectorXi::Zero(s.p);
  for (int i = 0; i < s.n; ++i)
    for (int j = 0; j < s.p; ++j) {
      const int m = stats.count(i, j);
      if (m == 0) continue;
      const Eigen::MatrixXd& G = stats.gram(i, j);
      const Eigen::VectorXd& h = stats.cross(i, j);
      const Eigen::MatrixXd D = A.transpose() * G * A + 1e-6 * m * Eigen::MatrixXd::Identity(s.S, s.S);
      const Eigen::VectorXd a = D.ldlt().solve(A.transpose() * h);
      for (int k = 0; k < s.S; ++k) s.alpha(lay.index(j, k), i) = a[k];
      const Eigen::VectorXd f = A * a;
      ssr[j] += std::max(0.0, stats.xx(i, j) - 2.0 * f.dot(h) + f.dot(G * f));
      xx[j] += stats.xx(i, j);
      cnt[j] += m;
    }
  s.sigma.resize(s.p);
  for (int j = 0; j < s.p; ++j) {
    if (cnt[j] == 0) {
      s.sigma[j] = hp.b_sigma / (hp.a_sigma + 1.0);
    } else {
      s.sigma[j] = std::max({ssr[j] / cnt[j], 1e-6 * xx[j] / cnt[j], 1e-10});
    }
  }

  // mixtures from the prior, then a short mixture-only warm start
  s.mix = MixtureParams(lay.size(), s.M);
  const std::vector<double> conc(static_cast<std::size_t>(s.M), hp.dirichlet);
  for (int c = 0; c < lay.size(); ++c) {
    s.mix.weight.row(c) = draw_dirichlet(rng, conc).transpose();
    for (int m = 0; m < s.M; ++m) {
      s.mix.mean(c, m) = draw_normal(rng, hp.a_mu, std::sqrt(hp.b_mu));
      s.mix.var(c, m) = draw_inverse_gamma(rng, hp.a_tau, hp.b_tau);
    }
  }
  s.labels = ClassLabels::Zero(lay.size(), s.n);
  update_class_labels(s, rng);
  for (int w = 0; w < cfg.warm_start_sweeps; ++w) {
    update_mixture_weights(s, hp, rng);
    update_class_labels(s, rng);
    update_mixture_means(s, hp, rng);
    update_mixture_variances(s, hp, rng);
  }
  s.z = cfg.z;
  return s;
}

void update_mixture_weights(ChainState& s, const Hyperparameters& hp, Rng& rng) {
  std::vector<double> conc(static_cast<std::size_t>(s.M));
  for (int c = 0; c < s.mix.slots; ++c) {
    std::fill(conc.begin(), conc.end(), hp.dirichlet);
    for (int i = 0; i < s.n; ++i) conc[static_cast<std::size_t>(s.labels(c, i))] += 1.0;
    s.mix.weight.row(c) = draw_dirichlet(rng, conc).transpose();
  }
}

void update_class_labels(ChainState& s, Rng& rng) {
  const Eigen::MatrixXd eps = s.residuals();
  std::vector<double> logw(static_cast<std::size_t>(s.M));
  for (int c = 0; c < s.mix.slots; ++c) {
    for (int i = 0; i < s.n; ++i) {
      for (int m = 0; m < s.M; ++m) {
        const double v = s.mix.var(c, m);
        const double r = eps(c, i) - s.mix.mean(c, m);
        logw[static_cast<std::size_t>(m)] = std::log(s.mix.weight(c, m)) - 0.5 * (kLog2Pi + std::log(v)) - 0.5 * r * r / v;
      }
      s.labels(c, i) = draw_categorical_log(rng, logw);
    }
  }
}

void update_mixture_means(ChainState& s, const Hyperparameters& hp, Rng& rng) {
  const Eigen::MatrixXd eps = s.residuals();
  for (int c = 0; c < s.mix.slots; ++c) {
    for (int m = 0; m < s.M; ++m) {
      double count = 0.0, sum = 0.0;
      for (int i = 0; i < s.n; ++i)
        if (s.labels(c, i) == m) {
          count += 1.0;
          sum += eps(c, i);
        }
      const double tau = s.mix.var(c, m);
      const double q = 1.0 / hp.b_mu + count / tau;
      const double mean = (hp.a_mu / hp.b_mu + sum / tau) / q;
      s.mix.mean(c, m) = draw_normal(rng, mean, 1.0 / std::sqrt(q));
    }
  }
}

void update_mixture_variances(ChainState& s, const Hyperparameters& hp, Rng& rng) {
  const Eigen::MatrixXd eps = s.residuals();
  for (int c = 0; c < s.mix.slots; ++c) {
    for (int m = 0; m < s.M; ++m) {
      double count = 0.0, ss = 0.0;
      for (int i = 0; i < s.n; ++i)
        if (s.labels(c, i) == m) {
          const double r = eps(c, i) - s.mix.mean(c, m);
          count += 1.0;
          ss += r * r;
        }
      s.mix.var(c, m) = draw_inverse_gamma(rng, hp.a_tau + 0.5 * count, hp.b_tau + 0.5 * ss);
    }
  }
}

void update_latent_coefficients(ChainState& s, const SufficientStats& stats, std::uint64_t sweep_seed, int threads) {
  const CoefficientLayout lay = s.layout();
  const int pS = lay.size(), pK = s.p * s.K;
  const Eigen::MatrixXd I_minus_B = Eigen::MatrixXd::Identity(pK, pK) - s.B.B;
  const Eigen::MatrixXd& A = s.basis.A;
  std::vector<std::vector<int>> idx(static_cast<std::size_t>(s.p));
  for (int j = 0; j < s.p; ++j) idx[static_cast<std::size_t>(j)] = node_indices(lay, j);

  auto draw_one = [&](int i) {
    Rng rng = make_rng(sweep_seed, 11, static_cast<std::uint64_t>(i));
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(pS, pS);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(pS);
    for (int j = 0; j < s.p; ++j) {
      if (stats.count(i, j) == 0) continue;
      const double inv_sigma = 1.0 / s.sigma[j];
      const Eigen::MatrixXd D1 = A.transpose() * stats.gram(i, j) * A * inv_sigma;
      const Eigen::VectorXd d2 = A.transpose() * stats.cross(i, j) * inv_sigma;
      const auto& id = idx[static_cast<std::size_t>(j)];
      for (int k = 0; k < s.S; ++k) {
        b[id[static_cast<std::size_t>(k)]] += d2[k];
        for (int h = 0; h < s.S; ++h) Q(id[static_cast<std::size_t>(k)], id[static_cast<std::size_t>(h)]) += D1(k, h);
      }
    }
    Eigen::VectorXd tinv(pS), mean(pS);
    for (int c = 0; c < pS; ++c) {
      const int lab = s.labels(c, i);
      tinv[c] = 1.0 / s.mix.var(c, lab);
      mean[c] = s.mix.mean(c, lab);
    }
    if (pK > 0) {
      const Eigen::MatrixXd W = tinv.head(pK).cwiseSqrt().asDiagonal() * I_minus_B;
      Q.topLeftCorner(pK, pK).noalias() += W.transpose() * W;
      b.head(pK).noalias() += I_minus_B.transpose() * tinv.head(pK).cwiseProduct(mean.head(pK));
    }
    for (int c = pK; c < pS; ++c) {
      Q(c, c) += tinv[c];
      b[c] += tinv[c] * mean[c];
    }
    Eigen::LLT<Eigen::MatrixXd> chol(Q);
    if (chol.info() != Eigen::Success) {
      const double jitter = 1e-10 * Q.diagonal().cwiseAbs().mean();
      Q.diagonal().array() += jitter;
      chol.compute(Q);
      if (chol.info() != Eigen::Success) throw NumericalError("latent coefficient precision is not positive definite");
    }
    s.alpha.col(i) = draw_gaussian_canonical(rng, chol, b);
  };

  const int workers = std::max(1, std::min(threads, s.n));
  if (workers == 1) {
    for (int i = 0; i < s.n; ++i) draw_one(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < s.n; i += workers) draw_one(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void update_noise_variances(ChainState& s, const SufficientStats& stats, const Hyperparameters& hp, Rng& rng) {
  for (int j = 0; j < s.p; ++j) {
    double count = 0.0, ssr = 0.0;
    for (int i = 0; i < s.n; ++i) {
      const int m = stats.count(i, j);
      if (m == 0) continue;
      const Eigen::VectorXd f = s.basis.A * node_coefficients(s, i, j);
      ssr += std::max(0.0, stats.xx(i, j) - 2.0 * f.dot(stats.cross(i, j)) + f.dot(stats.gram(i, j) * f));
      count += m;
    }
    s.sigma[j] = draw_inverse_gamma(rng, hp.a_sigma + 0.5 * count, hp.b_sigma + 0.5 * ssr);
  }
}

void update_edge_probability(ChainState& s, const Hyperparameters& hp, Rng& rng) {
  const double edges = s.E.edge_count();
  const double slots = static_cast<double>(s.p) * (s.p - 1);
  s.rho = draw_beta(rng, hp.a_rho + edges, hp.b_rho + slots - edges);
}

void update_effect_scale(ChainState& s, const Hyperparameters& hp, EffectScaleMode mode, Rng& rng) {
  const double K2 = static_cast<double>(s.K) * s.K;
  double shape = hp.a_gamma, scale = hp.b_gamma;
  for (int j = 0; j < s.p; ++j)
    for (int l = 0; l < s.p; ++l) {
      if (j == l) continue;
      const double tr = s.B.block(j, l).squaredNorm();
      if (s.E.edge(j, l)) {
        shape += 0.5 * K2;
        scale += 0.5 * tr;
      } else if (mode == EffectScaleMode::full) {
        shape += 0.5 * K2;
        scale += 0.5 * tr / hp.spike;
      }
    }
  s.gamma = draw_inverse_gamma(rng, shape, scale);
}

SplineConditional spline_conditional(const ChainState& s, const SufficientStats& stats, int k) {
  const CoefficientLayout lay = s.layout();
  const Eigen::MatrixXd& A = s.basis.A;
  SplineConditional out;
  out.precision = Eigen::MatrixXd::Zero(s.R, s.R);
  out.linear = Eigen::VectorXd::Zero(s.R);
  for (int i = 0; i < s.n; ++i) {
    for (int j = 0; j < s.p; ++j) {
      if (stats.count(i, j) == 0) continue;
      const Eigen::VectorXd a = node_coefficients(s, i, j);
      const double ak = s.alpha(lay.index(j, k), i);
      const double w = ak / s.sigma[j];
      const Eigen::MatrixXd& G = stats.gram(i, j);
      const Eigen::VectorXd others = A * a - ak * A.col(k);
      out.precision.noalias() += (w * ak) * G;
      out.linear.noalias() += w * (stats.cross(i, j) - G * others);
    }
  }
  out.precision.diagonal() += coefficient_prior_precision(s.R, s.basis.lambda[k]);
  return out;
}

void update_spline_coefficients(ChainState& s, const SufficientStats& stats, const Eigen::MatrixXd& J, Rng& rng) {
  for (int k = 0; k < s.S; ++k) {
    const SplineConditional cond = spline_conditional(s, stats, k);
    Eigen::LLT<Eigen::MatrixXd> chol(cond.precision);
    if (chol.info() != Eigen::Success) throw NumericalError("spline coefficient precision is not positive definite");
    const Eigen::VectorXd unconstrained = draw_gaussian_canonical(rng, chol, cond.linear);
    Eigen::MatrixXd others(s.R, s.S - 1);
    for (int h = 0, c = 0; h < s.S; ++h)
      if (h != k) others.col(c++) = s.basis.A.col(h);
    const Eigen::MatrixXd Q = chol.solve(Eigen::MatrixXd::Identity(s.R, s.R));
    Eigen::VectorXd a = normalize(orthogonal_project(unconstrained, others, Q, J), J);
    // round-off clean-up against the fixed columns
    for (int h = 0; h < others.cols(); ++h) a -= others.col(h).dot(J * a) * others.col(h);
    s.basis.A.col(k) = normalize(a, J);
  }
}

void update_smoothness(ChainState& s, Rng& rng) {
  const double shape = 0.5 * s.R;
  for (int k = 0; k < s.S; ++k) {
    const double upper = k == 0 ? kSmoothnessUpper : s.basis.lambda[k - 1];
    const double lower = k == s.S - 1 ? kSmoothnessLower : s.basis.lambda[k + 1];
    const double rate = 0.5 * s.basis.A.col(k).tail(s.R - 2).squaredNorm();
    if (!(rate > 0.0)) continue;
    const auto draw = draw_truncated_gamma(rng, shape, rate, lower, upper);
    if (draw && *draw > lower && *draw < upper) s.basis.lambda[k] = *draw;
  }
}

double graph_move_log_ratio(const ChainState& s, int j, int l, const Eigen::MatrixXd& proposal, bool proposed_edge,
                            const Hyperparameters& hp, MhMode mode) {
  const Eigen::MatrixXd current = s.B.block(j, l);
  const bool edge = s.E.edge(j, l);
  const double rho = std::clamp(s.rho, 1e-300, 1.0 - 1e-16);
  const double slab = s.gamma, spike = hp.spike * s.gamma;

  const double w = s.det_weight * s.n;
  const double loglik_current = -0.5 * node_quadratic(s, j, l, current) + w * log_abs_det_i_minus(s.B.B);
  const double loglik_proposed =
      -0.5 * node_quadratic(s, j, l, proposal) + w * log_abs_det_i_minus(with_block(s.B, j, l, proposal));

  auto log_edge = [&](bool e) { return e ? std::log(rho) : std::log1p(-rho); };
  if (mode == MhMode::standard) {
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(s.K, s.K);
    const double prior_proposed = log_matrix_normal(proposal, zero, proposed_edge ? slab : spike) + log_edge(proposed_edge);
    const double prior_current = log_matrix_normal(current, zero, edge ? slab : spike) + log_edge(edge);
    return prior_proposed - prior_current + loglik_proposed - loglik_current;
  }
  const double num = log_edge(proposed_edge) + log_matrix_normal(proposal, current, proposed_edge ? slab : spike) +
                     loglik_proposed;
  const double den = log_edge(edge) + log_matrix_normal(current, proposal, edge ? slab : spike) + loglik_current;
  return num - den;
}

namespace {

/// Gaussian part of the conditional of block (j, l): independent rows with data precision P[a]
/// and linear term lin[a]. The determinant term n log|det(I - B)| is linearized around a given B
/// through its gradient in the block, -[(I - B)^{-1}]_{lj}^T.
class BlockProposal {
 public:
  BlockProposal(const ChainState& s, int j, int l) : s_(s), j_(j), l_(l), K_(s.K), pK_(s.p * s.K) {
    P_.assign(static_cast<std::size_t>(K_), Eigen::MatrixXd::Zero(K_, K_));
    lin_.assign(static_cast<std::size_t>(K_), Eigen::VectorXd::Zero(K_));
    for (int a = 0; a < K_; ++a) {
      const int row = j * K_ + a;
      auto& Pa = P_[static_cast<std::size_t>(a)];
      auto& ba = lin_[static_cast<std::size_t>(a)];
      for (int i = 0; i < s.n; ++i) {
        const int lab = s.labels(row, i);
        const double tinv = 1.0 / s.mix.var(row, lab);
        const auto al = s.alpha.col(i).segment(l * K_, K_);
        // partial residual without block (j, l)
        const double y = s.alpha(row, i) - s.mix.mean(row, lab) - s.B.B.row(row).dot(s.alpha.col(i).head(pK_)) +
                         s.B.B.row(row).segment(l * K_, K_).dot(al);
        Pa.noalias() += tinv * al * al.transpose();
        ba.noalias() += tinv * y * al;
      }
    }
  }

  Eigen::MatrixXd gradient(const Eigen::MatrixXd& B) const {
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(pK_, pK_) - B);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(pK_, K_);
    rhs.middleRows(j_ * K_, K_).setIdentity();
    const Eigen::MatrixXd cols = lu.solve(rhs);  // block column j of (I - B)^{-1}
    return -cols.middleRows(l_ * K_, K_).transpose();
  }

  Eigen::MatrixXd draw(double v, const Eigen::MatrixXd& grad, Rng& rng) const {
    Eigen::MatrixXd out(K_, K_);
    for (int a = 0; a < K_; ++a) {
      const Eigen::LLT<Eigen::MatrixXd> chol = factor(a, v);
      out.row(a) = draw_gaussian_canonical(rng, chol, linear(a, grad)).transpose();
    }
    return out;
  }

  double log_density(const Eigen::MatrixXd& X, double v, const Eigen::MatrixXd& grad) const {
    double out = 0.0;
    for (int a = 0; a < K_; ++a) {
      const Eigen::LLT<Eigen::MatrixXd> chol = factor(a, v);
      const Eigen::VectorXd d = X.row(a).transpose() - chol.solve(linear(a, grad));
      const Eigen::MatrixXd L = chol.matrixL();
      out += L.diagonal().array().log().sum() - 0.5 * (L.transpose() * d).squaredNorm() - 0.5 * K_ * kLog2Pi;
    }
    return out;
  }

 private:
  Eigen::LLT<Eigen::MatrixXd> factor(int a, double v) const {
    Eigen::MatrixXd Pa = P_[static_cast<std::size_t>(a)];
    Pa.diagonal().array() += 1.0 / v;
    Eigen::LLT<Eigen::MatrixXd> chol(Pa);
    if (chol.info() != Eigen::Success) throw NumericalError("effect block precision is not positive definite");
    return chol;
  }
  Eigen::VectorXd linear(int a, const Eigen::MatrixXd& grad) const {
    return lin_[static_cast<std::size_t>(a)] + s_.det_weight * s_.n * grad.row(a).transpose();
  }

  const ChainState& s_;
  int j_, l_, K_, pK_;
  std::vector<Eigen::MatrixXd> P_;
  std::vector<Eigen::VectorXd> lin_;
};

/// Proposal from the block conditional under prior variance v_new; reverse move uses v_old.
/// Returns the accepted flag.
bool conditional_block_move(ChainState& s, int j, int l, bool proposed_edge, const Hyperparameters& hp,
                            double stability_tol, Rng& rng) {
  const BlockProposal prop(s, j, l);
  const bool edge = s.E.edge(j, l);
  const double v_old = edge ? s.gamma : hp.spike * s.gamma;
  const double v_new = proposed_edge ? s.gamma : hp.spike * s.gamma;
  const Eigen::MatrixXd grad_current = prop.gradient(s.B.B);
  const Eigen::MatrixXd proposal = prop.draw(v_new, grad_current, rng);
  const Eigen::MatrixXd proposed_B = with_block(s.B, j, l, proposal);
  if (!stability_check(proposed_B, stability_tol)) return false;
  const Eigen::MatrixXd current = s.B.block(j, l);
  const double ratio = graph_move_log_ratio(s, j, l, proposal, proposed_edge, hp, MhMode::standard) +
                       prop.log_density(current, v_old, prop.gradient(proposed_B)) -
                       prop.log_density(proposal, v_new, grad_current);
  if (std::log(draw_uniform(rng)) < ratio) {
    s.B.block(j, l) = proposal;
    s.E.set_edge(j, l, proposed_edge);
    return true;
  }
  return false;
}

}  // namespace

MoveOutcome update_graph_block(ChainState& s, int j, int l, const GraphMoveOptions& opt, const Hyperparameters& hp,
                               Rng& rng) {
  if (j == l) throw DomainError("graph move on a diagonal block");
  const bool proposed_edge = !s.E.edge(j, l);
  if (opt.proposal == GraphProposal::conditional) {
    return conditional_block_move(s, j, l, proposed_edge, hp, opt.stability_tol, rng) ? MoveOutcome::accepted
                                                                                       : MoveOutcome::rejected;
  }
  const int K = s.K;
  const double sd = std::sqrt(s.z);
  const Eigen::MatrixXd current = s.B.block(j, l);
  Eigen::MatrixXd proposal(K, K);
  bool found = false;
  const int attempts = opt.instability == InstabilityPolicy::redraw ? opt.max_redraws : 1;
  for (int a = 0; a < attempts && !found; ++a) {
    for (int r = 0; r < K; ++r)
      for (int c = 0; c < K; ++c) proposal(r, c) = current(r, c) + sd * draw_normal(rng);
    found = stable_with_block(s, j, l, proposal, opt.stability_tol);
  }
  if (!found) return opt.instability == InstabilityPolicy::redraw ? MoveOutcome::skipped : MoveOutcome::rejected;
  const double ratio = graph_move_log_ratio(s, j, l, proposal, proposed_edge, hp, opt.mode);
  if (std::log(draw_uniform(rng)) < ratio) {
    s.B.block(j, l) = proposal;
    s.E.set_edge(j, l, proposed_edge);
    return MoveOutcome::accepted;
  }
  return MoveOutcome::rejected;
}

MoveOutcome refresh_effect_block(ChainState& s, int j, int l, const Hyperparameters& hp, double stability_tol,
                                 Rng& rng) {
  if (j == l) throw DomainError("refresh on a diagonal block");
  return conditional_block_move(s, j, l, s.E.edge(j, l), hp, stability_tol, rng) ? MoveOutcome::accepted
                                                                                 : MoveOutcome::rejected;
}

double adapt_proposal_scale(double z, double window_acceptance, double target) {
  return z * std::exp(0.5 * (window_acceptance - target));
}

SweepCounts run_sweep(ChainState& s, const SufficientStats& stats, const ReparamSystem& sys, const ChainConfig& cfg,
                      Rng& rng) {
  const Hyperparameters& hp = cfg.hyper;
  update_latent_coefficients(s, stats, rng(), cfg.threads);
  update_noise_variances(s, stats, hp, rng);
  update_edge_probability(s, hp, rng);
  update_effect_scale(s, hp, cfg.effect_scale, rng);
  if (cfg.update_basis) {
    update_spline_coefficients(s, stats, sys.J, rng);
    update_smoothness(s, rng);
  }
  update_mixture_weights(s, hp, rng);
  update_class_labels(s, rng);
  update_mixture_means(s, hp, rng);
  update_mixture_variances(s, hp, rng);

  SweepCounts counts;
  const GraphMoveOptions opt{cfg.mh_mode, cfg.graph_proposal, cfg.instability, cfg.max_redraws, cfg.stability_tol};
  for (int j = 0; j < s.p; ++j) {
    for (int l = 0; l < s.p; ++l) {
      if (j == l) continue;
      switch (update_graph_block(s, j, l, opt, hp, rng)) {
        case MoveOutcome::accepted: ++counts.accepted; break;
        case MoveOutcome::rejected: ++counts.rejected; break;
        case MoveOutcome::skipped: ++counts.skipped; break;
      }
      if (cfg.refresh_effects && refresh_effect_block(s, j, l, hp, cfg.stability_tol, rng) == MoveOutcome::accepted) {
        ++counts.refreshed;
      }
    }
  }
  return counts;
}

PosteriorSamples run_chain(const FunctionalDataset& data, const ChainConfig& cfg, const ChainHooks& hooks) {
  cfg.validate();
  data.validate();
  const int K = cfg.K > 0 ? cfg.K : select_K(data);
  if (K > cfg.R) throw InvalidConfiguration("selected K exceeds R");
  const ReparamSystem sys = build_reparam_system(cfg.R);
  const SufficientStats stats = build_sufficient_stats(data, sys);
  Rng rng = make_rng(cfg.seed);
  ChainState s = init_state(data, sys, stats, cfg, K, rng);

  PosteriorSamples out;
  out.n = s.n;
  out.p = s.p;
  out.K = s.K;
  out.S = s.S;
  out.R = s.R;
  int window_accepted = 0, window_total = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    SweepCounts counts;
    const double ramp = cfg.det_anneal * cfg.burn_in;
    s.det_weight = ramp > 0.0 ? std::min(1.0, it / ramp) : 1.0;
    try {
      counts = run_sweep(s, stats, sys, cfg, rng);
    } catch (const NumericalError& e) {
      out.failed = true;
      out.failed_iteration = it + 1;
      out.failure = e.what();
      break;
    }
    out.moves_accepted.push_back(counts.accepted);
    out.moves_rejected.push_back(counts.rejected);
    out.moves_skipped.push_back(counts.skipped);
    out.refresh_accepted.push_back(counts.refreshed);
    out.z.push_back(s.z);
    window_accepted += counts.accepted;
    window_total += counts.accepted + counts.rejected + counts.skipped;
    if (it < cfg.burn_in && (it + 1) % cfg.adapt_interval == 0) {
      if (window_total > 0) {
        s.z = adapt_proposal_scale(s.z, static_cast<double>(window_accepted) / window_total, cfg.target_acceptance);
      }
      window_accepted = window_total = 0;
    }
    if (cfg.retains(it)) {
      out.iteration.push_back(it + 1);
      out.E.push_back(s.E);
      out.B.push_back(s.B.B);
      out.sigma.push_back(s.sigma);
      out.gamma.push_back(s.gamma);
      out.rho.push_back(s.rho);
      out.A.push_back(s.basis.A);
      out.lambda.push_back(s.basis.lambda);
    }
    if (hooks.after_sweep) hooks.after_sweep(it, s);
    if (hooks.progress && (it + 1) % 100 == 0) hooks.progress(it + 1, s);
  }
  out.final_state = std::move(s);
  return out;
}

}  // namespace fence
