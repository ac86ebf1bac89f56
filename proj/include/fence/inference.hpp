#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "fence/basis.hpp"
#include "fence/dataset.hpp"
#include "fence/model.hpp"
#include "fence/random.hpp"

namespace fence {

/// How the graph move scores a proposal.
/// standard: spike-slab prior centred at zero, symmetric random-walk proposal cancels.
/// as_printed: prior densities centred at the current / proposed block.
enum class MhMode { standard, as_printed };

/// What the graph move does with a proposal that breaks the eigenvalue condition.
enum class InstabilityPolicy { redraw, reject };

/// Conditional for the effect scale: `full` uses every off-diagonal block (slab and spike) and is
/// the exact conditional under the spike-slab prior; `slab_only` uses only blocks with an edge.
enum class EffectScaleMode { full, slab_only };

enum class BasisInit { fpca, random };

/// Block proposal of the birth/death move: random walk around the current block, or a draw
/// from the block's Gaussian conditional under the flipped indicator (exact MH correction).
enum class GraphProposal { random_walk, conditional };

MhMode parse_mh_mode(std::string_view s);
InstabilityPolicy parse_instability_policy(std::string_view s);
EffectScaleMode parse_effect_scale_mode(std::string_view s);
BasisInit parse_basis_init(std::string_view s);
GraphProposal parse_graph_proposal(std::string_view s);
std::string to_string(MhMode m);
std::string to_string(InstabilityPolicy m);
std::string to_string(EffectScaleMode m);
std::string to_string(BasisInit m);
std::string to_string(GraphProposal m);

struct ChainConfig {
  int iterations = 5000;
  int burn_in = 2000;
  int thin = 5;
  int M = 10;
  int S = 6;
  int R = 10;
  int K = 0;  ///< 0 selects K from the data
  Hyperparameters hyper;
  double z = 0.1;                  ///< initial proposal scale of the graph move
  double target_acceptance = 0.3;
  int adapt_interval = 100;
  double stability_tol = 1e-6;
  int max_redraws = 50;
  MhMode mh_mode = MhMode::standard;
  GraphProposal graph_proposal = GraphProposal::conditional;
  InstabilityPolicy instability = InstabilityPolicy::redraw;
  EffectScaleMode effect_scale = EffectScaleMode::slab_only;
  bool refresh_effects = true;     ///< within-model Gaussian refresh of every effect block
  bool update_basis = true;        ///< sample spline coefficients and smoothness scales
  BasisInit init_basis = BasisInit::fpca;
  int warm_start_sweeps = 20;      ///< mixture-only sweeps after initialization
  double det_anneal = 0.5;         ///< fraction of burn-in over which n log|det(I - B)| is phased in
  int threads = 1;                 ///< workers for the per-replicate latent update
  std::uint64_t seed = 1;

  void validate() const;
  int retained() const { return (iterations - burn_in) / thin; }
  bool retains(int iteration) const {
    return iteration >= burn_in && (iteration - burn_in + 1) % thin == 0;
  }
};

/// Every sampled quantity.
struct ChainState {
  int n = 0, p = 0, K = 0, S = 0, R = 0, M = 0;
  CyclicGraph E;
  BlockEffectMatrix B;
  double gamma = 1.0;  ///< effect scale
  double rho = 0.5;    ///< edge probability
  Eigen::VectorXd sigma;
  MixtureParams mix;
  ClassLabels labels;
  LatentCoefficients alpha;
  BasisState basis;
  double z = 0.1;
  /// Weight on n log|det(I - B)| in the effect-block moves; below 1 only while annealing burn-in.
  double det_weight = 1.0;

  CoefficientLayout layout() const { return {p, S, K}; }
  /// Exogenous residuals alpha - B~ alpha for every replicate (pS x n).
  Eigen::MatrixXd residuals() const;
};

/// Per-curve sufficient statistics against the reparametrized basis b~.
struct SufficientStats {
  int n = 0, p = 0, R = 0;
  std::vector<Eigen::MatrixXd> G;  ///< sum_t b~ b~^T
  std::vector<Eigen::VectorXd> h;  ///< sum_t x b~
  Eigen::MatrixXd xx;              ///< n x p, sum_t x^2
  Eigen::MatrixXi count;           ///< n x p, number of locations

  const Eigen::MatrixXd& gram(int i, int j) const { return G[static_cast<std::size_t>(i * p + j)]; }
  const Eigen::VectorXd& cross(int i, int j) const { return h[static_cast<std::size_t>(i * p + j)]; }
};

SufficientStats build_sufficient_stats(const FunctionalDataset& data, const ReparamSystem& sys);

/// Smallest K whose leading squared singular values explain at least `share` of the total.
int select_K_from_singular_values(std::span<const double> singular_values, double share = 0.9);

/// Curves imputed to the union grid, stacked (n p) x d, then the 90% explained-variance rule.
int select_K(const FunctionalDataset& data);

/// Initial state: empty graph, spike-scale effects, ordered smoothness scales, an orthonormal
/// basis, ridge-regression latent coefficients, mixtures from the prior.
ChainState init_state(const FunctionalDataset& data, const ReparamSystem& sys, const SufficientStats& stats,
                      const ChainConfig& cfg, int K, Rng& rng);

void update_mixture_weights(ChainState& s, const Hyperparameters& hp, Rng& rng);
void update_class_labels(ChainState& s, Rng& rng);
void update_mixture_means(ChainState& s, const Hyperparameters& hp, Rng& rng);
void update_mixture_variances(ChainState& s, const Hyperparameters& hp, Rng& rng);
/// Per-replicate Gaussian draws. Each replicate uses its own substream of `sweep_seed`, so the
/// result does not depend on `threads`.
void update_latent_coefficients(ChainState& s, const SufficientStats& stats, std::uint64_t sweep_seed,
                                int threads = 1);
void update_noise_variances(ChainState& s, const SufficientStats& stats, const Hyperparameters& hp, Rng& rng);
void update_edge_probability(ChainState& s, const Hyperparameters& hp, Rng& rng);
void update_effect_scale(ChainState& s, const Hyperparameters& hp, EffectScaleMode mode, Rng& rng);
void update_spline_coefficients(ChainState& s, const SufficientStats& stats, const Eigen::MatrixXd& J, Rng& rng);
void update_smoothness(ChainState& s, Rng& rng);

/// Precision and linear term of the unconstrained draw of spline vector k:
/// precision = sum_ij alpha_ijk^2 / sigma_j G_ij + S_k^{-1},
/// linear    = sum_ij alpha_ijk / sigma_j (h_ij - G_ij sum_{h != k} alpha_ijh A_h).
struct SplineConditional {
  Eigen::MatrixXd precision;
  Eigen::VectorXd linear;
};
SplineConditional spline_conditional(const ChainState& s, const SufficientStats& stats, int k);

struct GraphMoveOptions {
  MhMode mode = MhMode::standard;
  GraphProposal proposal = GraphProposal::random_walk;
  InstabilityPolicy instability = InstabilityPolicy::redraw;
  int max_redraws = 50;
  double stability_tol = 1e-6;
};

enum class MoveOutcome { accepted, rejected, skipped };

/// Log acceptance ratio of replacing block (j, l) by `proposal` with indicator `proposed_edge`.
/// Does not check stability.
double graph_move_log_ratio(const ChainState& s, int j, int l, const Eigen::MatrixXd& proposal, bool proposed_edge,
                            const Hyperparameters& hp, MhMode mode);

/// Birth/death move on edge l -> j. The conditional proposal ignores `mode` and the redraw
/// policy: an unstable draw is rejected.
MoveOutcome update_graph_block(ChainState& s, int j, int l, const GraphMoveOptions& opt, const Hyperparameters& hp,
                               Rng& rng);

/// Edge held fixed; block (j, l) is proposed from its Gaussian conditional with the determinant
/// term linearized, then corrected in the acceptance ratio.
MoveOutcome refresh_effect_block(ChainState& s, int j, int l, const Hyperparameters& hp, double stability_tol,
                                 Rng& rng);

/// z * exp(0.5 (acc - target)).
double adapt_proposal_scale(double z, double window_acceptance, double target = 0.3);

struct PosteriorSamples {
  int n = 0, p = 0, K = 0, S = 0, R = 0;
  std::vector<int> iteration;            ///< 1-based iteration of each retained draw
  std::vector<CyclicGraph> E;
  std::vector<Eigen::MatrixXd> B;        ///< pK x pK
  std::vector<Eigen::VectorXd> sigma;
  std::vector<double> gamma;
  std::vector<double> rho;
  std::vector<Eigen::MatrixXd> A;        ///< R x S
  std::vector<Eigen::VectorXd> lambda;
  /// Per iteration (all iterations run, burn-in included).
  std::vector<int> moves_accepted;
  std::vector<int> moves_rejected;
  std::vector<int> moves_skipped;
  std::vector<int> refresh_accepted;
  std::vector<double> z;
  bool failed = false;
  int failed_iteration = 0;
  std::string failure;
  ChainState final_state;

  std::size_t size() const { return E.size(); }
};

struct ChainHooks {
  /// Called after every sweep with the 0-based iteration.
  std::function<void(int, const ChainState&)> after_sweep;
  /// Called every 100 iterations.
  std::function<void(int, const ChainState&)> progress;
};

/// One full sweep in the fixed order: latent coefficients, noise variances, edge probability,
/// effect scale, spline coefficients, smoothness, mixture weights / labels / means / variances,
/// then every (j, l) block. Returns (accepted, rejected, skipped, refreshed) counts.
struct SweepCounts {
  int accepted = 0, rejected = 0, skipped = 0, refreshed = 0;
};
SweepCounts run_sweep(ChainState& s, const SufficientStats& stats, const ReparamSystem& sys, const ChainConfig& cfg,
                      Rng& rng);

/// Full chain. Deterministic given (data, cfg). A numerical failure stops the chain and returns the
/// draws retained so far with `failed` set.
PosteriorSamples run_chain(const FunctionalDataset& data, const ChainConfig& cfg, const ChainHooks& hooks = {});

}  // namespace fence
