#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fence/dataset.hpp"
#include "fence/evaluate.hpp"
#include "fence/inference.hpp"
#include "fence/simulate.hpp"

namespace fence {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Long format, header `replicate,node,t,value`, 1-based indices.
std::string format_dataset(const FunctionalDataset& data);
void write_dataset(const std::filesystem::path& path, const FunctionalDataset& data);
/// n and p are the largest replicate and node indices seen. Bad rows throw ParseError with the line.
FunctionalDataset parse_dataset(const std::string& text);
FunctionalDataset read_dataset(const std::filesystem::path& path);

/// truth_edges.csv (from,to), truth_effects.csv (to,from,row,col,value), truth_basis.csv
/// (R_true rows, one column per basis function), truth_noise.csv (node,variance) and
/// truth_latent.csv (replicate,node,k,value).
/// Returns the file names written.
std::vector<std::string> write_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth);

/// Edge list `from,to` (1-based) into a p-node graph; edges beyond p throw InputError.
CyclicGraph parse_edge_list(const std::string& text, int p);
/// Number of nodes recorded in truth_noise.csv.
int read_truth_node_count(const std::filesystem::path& noise_csv);

/// Dense numeric matrix without header.
std::string format_matrix(const Eigen::MatrixXd& m);
Eigen::MatrixXd parse_matrix(const std::string& text);

/// Inclusion matrix as written by `fit`: entry (r, c) is the probability of edge r -> c.
std::string format_inclusion(const InclusionMatrix& P);
InclusionMatrix parse_inclusion(const std::string& text);

/// Header plus numeric rows.
struct NumericTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<double> column(const std::string& name) const;
};
NumericTable parse_numeric_table(const std::string& text);

/// One CSV per parameter family plus the per-iteration move record. Returns the file names.
std::vector<std::string> write_samples(const std::filesystem::path& dir, const PosteriorSamples& s);

std::string format_diagnostics(const std::vector<ScalarDiagnostic>& d);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> extra;
  std::string started;
  std::string finished;
  bool failed = false;
  std::string failure;
};

/// manifest.json with the SHA-256 of every listed file in `dir`.
void write_manifest(const std::filesystem::path& dir, const Manifest& m, const std::vector<std::string>& files);

std::string utc_timestamp();

}  // namespace fence
