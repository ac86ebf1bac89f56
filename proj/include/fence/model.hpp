#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace fence {

/// Directed graph on p nodes, cycles allowed, no self-loops.
/// edge(j, l) == true means a directed edge l -> j (l is a parent of j).
class CyclicGraph {
public:
  CyclicGraph() = default;
  explicit CyclicGraph(int p);

  int p() const { return p_; }
  bool edge(int j, int l) const { return adj_[static_cast<std::size_t>(j * p_ + l)] != 0; }
  void set_edge(int j, int l, bool present);
  int edge_count() const;
  /// Adjacency as a dense 0/1 matrix.
  Eigen::MatrixXd to_matrix() const;

  bool operator==(const CyclicGraph&) const = default;

private:
  int p_ = 0;
  std::vector<std::uint8_t> adj_;
};

/// Causal effects among the first K coefficients of every node: a pK x pK matrix
/// made of K x K blocks, block (j, l) acting from node l onto node j.
struct BlockEffectMatrix {
  int p = 0;
  int K = 0;
  Eigen::MatrixXd B;

  BlockEffectMatrix() = default;
  BlockEffectMatrix(int p, int K) : p(p), K(K), B(Eigen::MatrixXd::Zero(p * K, p * K)) {}

  auto block(int j, int l) { return B.block(j * K, l * K, K, K); }
  auto block(int j, int l) const { return B.block(j * K, l * K, K, K); }
};

/// Position of coefficient k of node j in the stacked pS-vector: the causal coefficients of
/// all nodes come first (node-major), then the non-causal coefficients of all nodes.
struct CoefficientLayout {
  int p = 0;
  int S = 0;
  int K = 0;

  int size() const { return p * S; }
  int index(int j, int k) const { return k < K ? j * K + k : p * K + j * (S - K) + (k - K); }
  int node_of(int c) const { return c < p * K ? c / K : (c - p * K) / (S - K); }
  int slot_of(int c) const { return c < p * K ? c % K : K + (c - p * K) % (S - K); }
};

/// B~ = (B 0; 0 0) in the pS coefficient space.
Eigen::MatrixXd embed(const BlockEffectMatrix& B, int S);
/// Inverse of embed: reads the causal sub-block back out.
BlockEffectMatrix extract_causal(const Eigen::MatrixXd& B_tilde, int p, int K);

double spectral_radius(const Eigen::MatrixXd& B);
/// True iff every eigenvalue of B has modulus at most 1 - tol.
bool stability_check(const Eigen::MatrixXd& B, double tol = 1e-6);
inline bool stability_check(const BlockEffectMatrix& B, double tol = 1e-6) {
  return stability_check(B.B, tol);
}

/// Solves (I - B~) alpha = eps.
Eigen::VectorXd solve_sem(const Eigen::MatrixXd& B_tilde, const Eigen::VectorXd& eps);
/// eps = alpha - B~ alpha.
Eigen::VectorXd sem_residuals(const Eigen::MatrixXd& B_tilde, const Eigen::VectorXd& alpha);

/// log |det(I - B)|; throws SingularSystemError when I - B is singular.
double log_abs_det_i_minus(const Eigen::MatrixXd& B);

/// Log density of alpha under N((I - B~)^{-1} M, precision (I - B~)^T T^{-1} (I - B~)),
/// with T given by its diagonal.
double latent_log_density(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& B_tilde,
                          const Eigen::VectorXd& M, const Eigen::VectorXd& T);

/// Gaussian mixture parameters for every coefficient slot c (layout index) and component m.
struct MixtureParams {
  int slots = 0;
  int M = 0;
  Eigen::MatrixXd weight;  ///< slots x M
  Eigen::MatrixXd mean;    ///< slots x M
  Eigen::MatrixXd var;     ///< slots x M

  MixtureParams() = default;
  MixtureParams(int slots, int M)
      : slots(slots), M(M), weight(Eigen::MatrixXd::Constant(slots, M, 1.0 / M)),
        mean(Eigen::MatrixXd::Zero(slots, M)), var(Eigen::MatrixXd::Ones(slots, M)) {}
};

/// Class labels: labels(c, i) in [0, M) for slot c and replicate i.
using ClassLabels = Eigen::MatrixXi;

/// Latent coefficients: column i is the pS-vector alpha~ of replicate i.
using LatentCoefficients = Eigen::MatrixXd;

struct Hyperparameters {
  double a_gamma = 1.0;
  double b_gamma = 1.0;
  double spike = 0.02;  ///< s
  double a_mu = 0.0;
  double b_mu = 100.0;
  double a_tau = 1.0;
  double b_tau = 1.0;
  double a_sigma = 0.01;
  double b_sigma = 0.01;
  double dirichlet = 1.0;  ///< beta
  double a_rho = 1.0;
  double b_rho = 1.0;

  /// Throws InvalidConfiguration unless every value is in range.
  void validate() const;
};

}  // namespace fence
