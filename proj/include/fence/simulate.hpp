#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fence/basis.hpp"
#include "fence/dataset.hpp"
#include "fence/model.hpp"
#include "fence/random.hpp"

namespace fence {

enum class ExogenousKind {
  laplace,
  student_t,
  uniform,
  exponential,
  mixture_double_exponential,
  symmetric_gaussian_mix4,
  asymmetric_gaussian_mix2,
};

ExogenousKind parse_exogenous_kind(std::string_view name);
std::string to_string(ExogenousKind kind);

/// Exogenous law with its component parameters. Defaults for the mixture laws are
/// ordinary choices; every value is overridable from the simulation config.
struct ExogenousLaw {
  ExogenousKind kind = ExogenousKind::laplace;
  double laplace_scale = 0.2;
  double student_df = 1.0;
  double uniform_half_width = 1.0;
  double exponential_rate = 1.0;  ///< draws are centered to mean zero
  double dexp_center = 1.0;       ///< 0.5 Laplace(-c, b) + 0.5 Laplace(c, b)
  double dexp_scale = 0.5;
  double mix4_inner = 1.0;        ///< equal-weight N(+-inner, v), N(+-outer, v)
  double mix4_outer = 3.0;
  double mix4_var = 0.25;
  double mix2_weight = 0.7;       ///< w N(m1, v1) + (1 - w) N(m2, v2)
  double mix2_mean1 = -0.5;
  double mix2_var1 = 0.25;
  double mix2_mean2 = 1.5;
  double mix2_var2 = 1.0;
};

enum class GraphClass { unrestricted_cyclic, disjoint_cycles, acyclic };
GraphClass parse_graph_class(std::string_view name);
std::string to_string(GraphClass g);

enum class GridDesign { regular, irregular };

struct DgpConfig {
  int n = 150;
  int p = 20;
  int d = 125;                  ///< regular grid size
  double edge_prob = -1.0;      ///< negative means 2/p
  int K_true = 4;
  int R_true = 6;
  ExogenousLaw law;
  double snr = 5.0;             ///< mean |Y| / noise sd; infinity gives noiseless data
  GraphClass graph_class = GraphClass::unrestricted_cyclic;
  GridDesign grid = GridDesign::regular;
  int pool_size = 250;          ///< irregular design: size of the shared location pool
  int points_per_curve = 20;    ///< irregular design: locations drawn per curve
  double target_radius = 0.8;   ///< spectral radius after rescaling an unstable draw
  double stability_tol = 1e-6;
  double cycle_prob = 0.5;      ///< disjoint_cycles: chance a node group becomes a cycle
  int max_cycle_length = 3;
  std::uint64_t seed = 1;

  double effective_edge_prob() const { return edge_prob < 0.0 ? (p > 0 ? std::min(1.0, 2.0 / p) : 0.0) : edge_prob; }
  void validate() const;
};

struct GroundTruth {
  CyclicGraph graph;
  BlockEffectMatrix effects;
  SplineSystem splines;            ///< the true B-spline system (R_true functions)
  Eigen::MatrixXd basis;           ///< R_true x K_true coefficient vectors of the true basis
  std::vector<double> basis_grid;  ///< grid on which the basis is empirically orthonormal
  Eigen::VectorXd noise_variance;  ///< per node
  Eigen::MatrixXd latent;          ///< pK x n true basis coefficients
};

CyclicGraph sample_graph(int p, double edge_prob, GraphClass graph_class, Rng& rng,
                         double cycle_prob = 0.5, int max_cycle_length = 3);

BlockEffectMatrix sample_effects(const CyclicGraph& graph, int K, double target_radius, Rng& rng,
                                 double stability_tol = 1e-6);

/// Standard normal spline coefficients, Gram-Schmidt orthonormalized in the empirical L2 inner
/// product (1/|grid|) sum_t f(t) g(t). Returns R x K.
Eigen::MatrixXd sample_true_basis(int K, const SplineSystem& splines, std::span<const double> grid, Rng& rng);

Eigen::VectorXd sample_exogenous(const ExogenousLaw& law, int count, Rng& rng);

std::pair<FunctionalDataset, GroundTruth> generate_dataset(const DgpConfig& cfg);

/// Noiseless signal Y evaluated at the dataset's locations.
FunctionalDataset noiseless_signal(const GroundTruth& truth, const FunctionalDataset& data);

/// Realized mean over replicates and locations of |Y_j(t)| / sd_j for node j.
double realized_snr(const GroundTruth& truth, const FunctionalDataset& data, int node);

}  // namespace fence
