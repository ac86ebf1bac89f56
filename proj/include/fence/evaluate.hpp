#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fence/inference.hpp"
#include "fence/model.hpp"
#include "fence/simulate.hpp"

namespace fence {

/// P(j, l) = posterior frequency of the edge l -> j; zero diagonal.
using InclusionMatrix = Eigen::MatrixXd;

InclusionMatrix inclusion_probabilities(std::span<const CyclicGraph> draws);
InclusionMatrix inclusion_probabilities(const PosteriorSamples& samples);

/// Edge l -> j kept iff P(j, l) >= threshold.
CyclicGraph estimate_graph(const InclusionMatrix& P, double threshold = 0.5);

struct RecoveryMetrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  double tpr = 0.0, fdr = 0.0, mcc = 0.0;
};

/// Off-diagonal confusion counts. TPR is 1 without true edges, FDR 0 without predictions,
/// MCC 0 whenever a marginal count is zero.
RecoveryMetrics recovery_metrics(const CyclicGraph& estimated, const CyclicGraph& truth);

/// Effective sample size by the initial monotone sequence estimator; nullopt for a constant series.
std::optional<double> effective_sample_size(std::span<const double> x);

/// Difference of means of the first 10% and last 50% over its standard error, each part's
/// variance taken from its own spectral density at zero (via the same ESS estimator).
std::optional<double> geweke_z(std::span<const double> x);

struct ScalarDiagnostic {
  std::string name;
  std::optional<double> ess;
  std::optional<double> geweke;
};

/// ESS and Geweke z for gamma, rho, every sigma_j and the edge count.
std::vector<ScalarDiagnostic> chain_diagnostics(const PosteriorSamples& samples);
/// Same for named series of equal length.
std::vector<ScalarDiagnostic> chain_diagnostics(const std::vector<std::string>& names,
                                                const std::vector<std::vector<double>>& series);

struct StudyCell {
  int n = 0, p = 0, d = 0;
  ExogenousKind law = ExogenousKind::laplace;
  GraphClass graph_class = GraphClass::unrestricted_cyclic;
};

struct StudyConfig {
  std::vector<int> n{150};
  std::vector<int> p{10};
  std::vector<int> d{50};
  std::vector<ExogenousKind> laws{ExogenousKind::laplace};
  std::vector<GraphClass> graph_classes{GraphClass::unrestricted_cyclic};
  int replicates = 10;
  std::uint64_t seed = 1;
  double threshold = 0.5;
  int jobs = 1;
  DgpConfig dgp;      ///< template; grid fields are overwritten per cell
  ChainConfig chain;  ///< template; the seed is derived per replicate
  std::filesystem::path out_dir;  ///< empty: no files, no resume

  /// Cartesian product in the order n, p, d, law, graph class.
  std::vector<StudyCell> cells() const;
};

/// Seeds of replicate r (0-based); shared by every cell so cells differ only in their design.
std::uint64_t replicate_data_seed(std::uint64_t study_seed, int r);
std::uint64_t replicate_chain_seed(std::uint64_t study_seed, int r);

/// Fits one dataset and returns its inclusion matrix.
using Fitter = std::function<InclusionMatrix(const FunctionalDataset&, const ChainConfig&)>;
Fitter default_fitter();

struct ReplicateResult {
  bool ok = false;
  std::string error;
  RecoveryMetrics metrics;
  bool resumed = false;
};

struct CellSummary {
  StudyCell cell;
  std::vector<ReplicateResult> replicates;
  int successes() const;
  int failures() const;
  /// Mean and sample sd over successful replicates.
  std::pair<double, double> tpr() const;
  std::pair<double, double> fdr() const;
  std::pair<double, double> mcc() const;
};

/// Generate, fit, threshold and score every replicate of every cell. With an output directory,
/// each replicate writes <out>/<cell>/rep_<r>/metrics.json and replicates whose metrics file
/// already exists are read back instead of recomputed.
std::vector<CellSummary> run_study(const StudyConfig& cfg, const Fitter& fitter = default_fitter());

std::string cell_name(const StudyCell& cell);
/// "0.91(0.03)"
std::string mean_sd(std::pair<double, double> v);
/// CSV table: n,p,d,law,graph_class,replicates,failures,TPR,FDR,MCC
std::string format_study_table(const std::vector<CellSummary>& cells);

std::string metrics_json(const RecoveryMetrics& m);
RecoveryMetrics parse_metrics_json(const std::string& text);

}  // namespace fence
