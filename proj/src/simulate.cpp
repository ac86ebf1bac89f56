#include "fence/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/LU>

#include "fence/error.hpp"

namespace fence {

namespace {

// Stream identifiers for derive_seed; each component of the generator draws from its own stream.
enum Stream : std::uint64_t {
  kGraphStream = 1,
  kEffectStream = 2,
  kBasisStream = 3,
  kGridStream = 4,
  kExogenousStream = 5,
  kNoiseStream = 6,
  kLocationStream = 7,
};

double draw_laplace(Rng& rng, double center, double scale) {
  const double u = draw_uniform(rng) - 0.5;
  const double mag = std::max(1.0 - 2.0 * std::abs(u), std::numeric_limits<double>::min());
  return center - scale * (u < 0.0 ? -1.0 : 1.0) * std::log(mag);
}

std::vector<int> random_permutation(int p, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(p));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = p - 1; i > 0; --i) {
    const int k = std::uniform_int_distribution<int>(0, i)(rng);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(k)]);
  }
  return perm;
}

}  // namespace

ExogenousKind parse_exogenous_kind(std::string_view name) {
  if (name == "laplace") return ExogenousKind::laplace;
  if (name == "student_t") return ExogenousKind::student_t;
  if (name == "uniform") return ExogenousKind::uniform;
  if (name == "exponential") return ExogenousKind::exponential;
  if (name == "mixture_double_exponential") return ExogenousKind::mixture_double_exponential;
  if (name == "symmetric_gaussian_mix4") return ExogenousKind::symmetric_gaussian_mix4;
  if (name == "asymmetric_gaussian_mix2") return ExogenousKind::asymmetric_gaussian_mix2;
  throw InvalidConfiguration("unknown exogenous law '" + std::string(name) + "'");
}

std::string to_string(ExogenousKind kind) {
  switch (kind) {
    case ExogenousKind::laplace: return "laplace";
    case ExogenousKind::student_t: return "student_t";
    case ExogenousKind::uniform: return "uniform";
    case ExogenousKind::exponential: return "exponential";
    case ExogenousKind::mixture_double_exponential: return "mixture_double_exponential";
    case ExogenousKind::symmetric_gaussian_mix4: return "symmetric_gaussian_mix4";
    case ExogenousKind::asymmetric_gaussian_mix2: return "asymmetric_gaussian_mix2";
  }
  return "unknown";
}

GraphClass parse_graph_class(std::string_view name) {
  if (name == "unrestricted_cyclic") return GraphClass::unrestricted_cyclic;
  if (name == "disjoint_cycles") return GraphClass::disjoint_cycles;
  if (name == "acyclic") return GraphClass::acyclic;
  throw InvalidConfiguration("unknown graph class '" + std::string(name) + "'");
}

std::string to_string(GraphClass g) {
  switch (g) {
    case GraphClass::unrestricted_cyclic: return "unrestricted_cyclic";
    case GraphClass::disjoint_cycles: return "disjoint_cycles";
    case GraphClass::acyclic: return "acyclic";
  }
  return "unknown";
}

void DgpConfig::validate() const {
  if (n < 1 || p < 1 || d < 1) throw InvalidConfiguration("n, p and d must be at least 1");
  if (!(snr > 0.0)) throw InvalidConfiguration("snr must be positive");
  const double e = effective_edge_prob();
  if (!(e >= 0.0 && e <= 1.0)) throw InvalidConfiguration("edge_prob must lie in [0, 1]");
  if (K_true < 1 || K_true > R_true) throw InvalidConfiguration("need 1 <= K_true <= R_true");
  if (R_true < 6) throw InvalidConfiguration("R_true must be at least 6");
  if (!(target_radius > 0.0 && target_radius < 1.0 - stability_tol)) {
    throw InvalidConfiguration("target_radius must lie in (0, 1 - stability_tol)");
  }
  if (grid == GridDesign::irregular && (points_per_curve < 1 || points_per_curve > pool_size)) {
    throw InvalidConfiguration("points_per_curve must lie in [1, pool_size]");
  }
  if (!(cycle_prob >= 0.0 && cycle_prob <= 1.0)) throw InvalidConfiguration("cycle_prob must lie in [0, 1]");
  if (max_cycle_length < 2) throw InvalidConfiguration("max_cycle_length must be at least 2");
}

CyclicGraph sample_graph(int p, double edge_prob, GraphClass graph_class, Rng& rng, double cycle_prob,
                         int max_cycle_length) {
  CyclicGraph g(p);
  auto coin = [&](double prob) { return draw_uniform(rng) < prob; };
  switch (graph_class) {
    case GraphClass::unrestricted_cyclic:
      for (int j = 0; j < p; ++j)
        for (int l = 0; l < p; ++l)
          if (j != l && coin(edge_prob)) g.set_edge(j, l, true);
      break;
    case GraphClass::acyclic: {
      const auto order = random_permutation(p, rng);
      for (int a = 0; a < p; ++a)
        for (int b = a + 1; b < p; ++b)
          if (coin(edge_prob)) g.set_edge(order[static_cast<std::size_t>(b)], order[static_cast<std::size_t>(a)], true);
      break;
    }
    case GraphClass::disjoint_cycles: {
      // Nodes are split, in random order, into groups that are either a single node or a simple
      // directed cycle. Edges between groups only run forward, so no further cycles appear.
      const auto order = random_permutation(p, rng);
      std::vector<int> group(static_cast<std::size_t>(p));
      int pos = 0, group_id = 0;
      while (pos < p) {
        const int remaining = p - pos;
        int len = 1;
        if (remaining >= 2 && coin(cycle_prob)) {
          len = std::uniform_int_distribution<int>(2, std::min(max_cycle_length, remaining))(rng);
        }
        for (int a = 0; a < len; ++a) group[static_cast<std::size_t>(order[static_cast<std::size_t>(pos + a)])] = group_id;
        if (len >= 2) {
          for (int a = 0; a < len; ++a) {
            const int from = order[static_cast<std::size_t>(pos + a)];
            const int to = order[static_cast<std::size_t>(pos + (a + 1) % len)];
            g.set_edge(to, from, true);
          }
        }
        pos += len;
        ++group_id;
      }
      for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) {
          const int from = order[static_cast<std::size_t>(a)], to = order[static_cast<std::size_t>(b)];
          if (group[static_cast<std::size_t>(from)] < group[static_cast<std::size_t>(to)] && coin(edge_prob)) {
            g.set_edge(to, from, true);
          }
        }
      }
      break;
    }
  }
  return g;
}

BlockEffectMatrix sample_effects(const CyclicGraph& graph, int K, double target_radius, Rng& rng,
                                 double stability_tol) {
  BlockEffectMatrix B(graph.p(), K);
  for (int j = 0; j < graph.p(); ++j) {
    for (int l = 0; l < graph.p(); ++l) {
      if (!graph.edge(j, l)) continue;
      auto blk = B.block(j, l);
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) blk(a, b) = draw_normal(rng);
    }
  }
  if (!stability_check(B.B, stability_tol)) {
    const double radius = spectral_radius(B.B);
    if (!(radius > 0.0) || !std::isfinite(radius)) throw GenerationError("cannot rescale effect matrix");
    B.B *= target_radius / radius;
    if (!stability_check(B.B, stability_tol)) throw GenerationError("rescaled effect matrix is still unstable");
  }
  return B;
}

Eigen::MatrixXd sample_true_basis(int K, const SplineSystem& splines, std::span<const double> grid, Rng& rng) {
  const int R = splines.R;
  if (K < 1 || K > R) throw InvalidConfiguration("need 1 <= K <= R for the true basis");
  if (grid.empty()) throw InvalidConfiguration("orthonormalization grid is empty");
  const Eigen::MatrixXd Phi = evaluate_design(splines, grid);
  const Eigen::MatrixXd G = Phi.transpose() * Phi / static_cast<double>(grid.size());
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::MatrixXd C(R, K);
    for (int r = 0; r < R; ++r)
      for (int k = 0; k < K; ++k) C(r, k) = draw_normal(rng);
    bool ok = true;
    for (int k = 0; k < K && ok; ++k) {
      const double start = std::sqrt(C.col(k).dot(G * C.col(k)));
      // modified Gram-Schmidt, two passes
      for (int pass = 0; pass < 2; ++pass) {
        for (int h = 0; h < k; ++h) C.col(k) -= C.col(h).dot(G * C.col(k)) * C.col(h);
      }
      const double norm = std::sqrt(C.col(k).dot(G * C.col(k)));
      if (!(norm > 1e-8 * start)) {
        ok = false;
        break;
      }
      C.col(k) /= norm;
    }
    if (!ok) continue;
    const Eigen::MatrixXd gram = C.transpose() * G * C;
    if ((gram - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff() <= 1e-10) return C;
  }
  throw GenerationError("could not draw a linearly independent true basis");
}

Eigen::VectorXd sample_exogenous(const ExogenousLaw& law, int count, Rng& rng) {
  Eigen::VectorXd out(count);
  for (int c = 0; c < count; ++c) {
    double v = 0.0;
    switch (law.kind) {
      case ExogenousKind::laplace:
        v = draw_laplace(rng, 0.0, law.laplace_scale);
        break;
      case ExogenousKind::student_t:
        v = std::student_t_distribution<double>(law.student_df)(rng);
        break;
      case ExogenousKind::uniform:
        v = law.uniform_half_width * (2.0 * draw_uniform(rng) - 1.0);
        break;
      case ExogenousKind::exponential:
        v = std::exponential_distribution<double>(law.exponential_rate)(rng) - 1.0 / law.exponential_rate;
        break;
      case ExogenousKind::mixture_double_exponential: {
        const double center = draw_uniform(rng) < 0.5 ? -law.dexp_center : law.dexp_center;
        v = draw_laplace(rng, center, law.dexp_scale);
        break;
      }
      case ExogenousKind::symmetric_gaussian_mix4: {
        const double means[4] = {-law.mix4_outer, -law.mix4_inner, law.mix4_inner, law.mix4_outer};
        const int m = std::min(3, static_cast<int>(4.0 * draw_uniform(rng)));
        v = draw_normal(rng, means[m], std::sqrt(law.mix4_var));
        break;
      }
      case ExogenousKind::asymmetric_gaussian_mix2:
        v = draw_uniform(rng) < law.mix2_weight ? draw_normal(rng, law.mix2_mean1, std::sqrt(law.mix2_var1))
                                                : draw_normal(rng, law.mix2_mean2, std::sqrt(law.mix2_var2));
        break;
    }
    out[c] = v;
  }
  return out;
}

std::pair<FunctionalDataset, GroundTruth> generate_dataset(const DgpConfig& cfg) {
  cfg.validate();
  const int n = cfg.n, p = cfg.p, K = cfg.K_true;
  GroundTruth truth;

  Rng graph_rng = make_rng(cfg.seed, kGraphStream);
  truth.graph = sample_graph(p, cfg.effective_edge_prob(), cfg.graph_class, graph_rng, cfg.cycle_prob,
                             cfg.max_cycle_length);
  Rng effect_rng = make_rng(cfg.seed, kEffectStream);
  truth.effects = sample_effects(truth.graph, K, cfg.target_radius, effect_rng, cfg.stability_tol);

  // measurement locations
  std::vector<double> regular;
  std::vector<double> pool;
  if (cfg.grid == GridDesign::regular) {
    regular.resize(static_cast<std::size_t>(cfg.d));
    for (int u = 0; u < cfg.d; ++u) regular[static_cast<std::size_t>(u)] = cfg.d == 1 ? 0.5 : static_cast<double>(u) / (cfg.d - 1);
    truth.basis_grid = regular;
  } else {
    Rng grid_rng = make_rng(cfg.seed, kGridStream);
    pool.resize(static_cast<std::size_t>(cfg.pool_size));
    for (auto& t : pool) t = draw_uniform(grid_rng);
    std::sort(pool.begin(), pool.end());
    truth.basis_grid = pool;
  }

  truth.splines = build_spline_system(cfg.R_true);
  Rng basis_rng = make_rng(cfg.seed, kBasisStream);
  truth.basis = sample_true_basis(K, truth.splines, truth.basis_grid, basis_rng);

  FunctionalDataset data(n, p);
  const Eigen::MatrixXd I_minus_B = Eigen::MatrixXd::Identity(p * K, p * K) - truth.effects.B;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(I_minus_B);
  truth.latent.resize(p * K, n);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(cfg.seed, kExogenousStream, static_cast<std::uint64_t>(i));
    const Eigen::VectorXd eps = sample_exogenous(cfg.law, p * K, rng);
    truth.latent.col(i) = lu.solve(eps);

    Rng loc_rng = make_rng(cfg.seed, kLocationStream, static_cast<std::uint64_t>(i));
    for (int j = 0; j < p; ++j) {
      Curve& c = data.curve(i, j);
      if (cfg.grid == GridDesign::regular) {
        c.t = regular;
      } else {
        // partial Fisher-Yates over pool indices
        std::vector<int> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (int a = 0; a < cfg.points_per_curve; ++a) {
          const int b = std::uniform_int_distribution<int>(a, static_cast<int>(idx.size()) - 1)(loc_rng);
          std::swap(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        }
        idx.resize(static_cast<std::size_t>(cfg.points_per_curve));
        std::sort(idx.begin(), idx.end());
        c.t.clear();
        for (int a : idx) c.t.push_back(pool[static_cast<std::size_t>(a)]);
      }
      c.x.assign(c.t.size(), 0.0);
    }
  }

  const FunctionalDataset signal = noiseless_signal(truth, data);
  truth.noise_variance.resize(p);
  for (int j = 0; j < p; ++j) {
    double total = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < n; ++i) {
      for (double y : signal.curve(i, j).x) total += std::abs(y);
      count += signal.curve(i, j).x.size();
    }
    const double mean_abs = count > 0 ? total / static_cast<double>(count) : 0.0;
    const double sd = std::isinf(cfg.snr) ? 0.0 : mean_abs / cfg.snr;
    truth.noise_variance[j] = sd * sd;
  }
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(cfg.seed, kNoiseStream, static_cast<std::uint64_t>(i));
    for (int j = 0; j < p; ++j) {
      const double sd = std::sqrt(truth.noise_variance[j]);
      const Curve& y = signal.curve(i, j);
      Curve& c = data.curve(i, j);
      for (std::size_t u = 0; u < c.t.size(); ++u) c.x[u] = y.x[u] + (sd > 0.0 ? draw_normal(rng, 0.0, sd) : 0.0);
    }
  }
  return {std::move(data), std::move(truth)};
}

FunctionalDataset noiseless_signal(const GroundTruth& truth, const FunctionalDataset& data) {
  const int K = static_cast<int>(truth.basis.cols());
  FunctionalDataset out(data.n(), data.p());
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.p(); ++j) {
      const Curve& src = data.curve(i, j);
      Curve& dst = out.curve(i, j);
      dst.t = src.t;
      const Eigen::VectorXd coef = truth.basis * truth.latent.col(i).segment(j * K, K);
      const Eigen::MatrixXd Phi = evaluate_design(truth.splines, src.t);
      const Eigen::VectorXd y = Phi * coef;
      dst.x.assign(y.data(), y.data() + y.size());
    }
  }
  return out;
}

double realized_snr(const GroundTruth& truth, const FunctionalDataset& data, int node) {
  const FunctionalDataset signal = noiseless_signal(truth, data);
  double total = 0.0;
  std::size_t count = 0;
  for (int i = 0; i < signal.n(); ++i) {
    for (double y : signal.curve(i, node).x) total += std::abs(y);
    count += signal.curve(i, node).x.size();
  }
  const double sd = std::sqrt(truth.noise_variance[node]);
  return (total / static_cast<double>(count)) / sd;
}

}  // namespace fence
