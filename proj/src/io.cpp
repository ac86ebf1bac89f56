#include "fence/io.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include <json.hpp>

#include "fence/error.hpp"

namespace fence {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    pos = end + 1;
  }
  return out;
}

bool parse_number(std::string_view s, double& v) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_index(std::string_view s, long& v) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf.data(), ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

std::string format_dataset(const FunctionalDataset& data) {
  std::string out = "replicate,node,t,value\n";
  for (int i = 0; i < data.n(); ++i)
    for (int j = 0; j < data.p(); ++j) {
      const Curve& c = data.curve(i, j);
      for (std::size_t u = 0; u < c.t.size(); ++u) {
        out += std::to_string(i + 1);
        out += ',';
        out += std::to_string(j + 1);
        out += ',';
        out += format_double(c.t[u]);
        out += ',';
        out += format_double(c.x[u]);
        out += '\n';
      }
    }
  return out;
}

void write_dataset(const std::filesystem::path& path, const FunctionalDataset& data) {
  write_text_file(path, format_dataset(data));
}

FunctionalDataset parse_dataset(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines.front() != "replicate,node,t,value") {
    throw ParseError("dataset header must be 'replicate,node,t,value'", 1);
  }
  struct Row {
    long i, j;
    double t, x;
  };
  std::vector<Row> rows;
  long n = 0, p = 0;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const long line_no = static_cast<long>(k + 1);
    if (lines[k].empty()) continue;
    const auto f = split_fields(lines[k]);
    if (f.size() != 4) throw ParseError("expected 4 fields, found " + std::to_string(f.size()), line_no);
    Row r{};
    if (!parse_index(f[0], r.i) || r.i < 1) throw ParseError("bad replicate index", line_no);
    if (!parse_index(f[1], r.j) || r.j < 1) throw ParseError("bad node index", line_no);
    if (!parse_number(f[2], r.t)) throw ParseError("bad location", line_no);
    if (!(r.t >= 0.0 && r.t <= 1.0)) throw ParseError("location outside [0, 1]", line_no);
    if (!parse_number(f[3], r.x) || !std::isfinite(r.x)) throw ParseError("bad value", line_no);
    n = std::max(n, r.i);
    p = std::max(p, r.j);
    rows.push_back(r);
  }
  if (n == 0) throw ParseError("dataset has no rows", 2);
  FunctionalDataset data(static_cast<int>(n), static_cast<int>(p));
  for (const Row& r : rows) {
    Curve& c = data.curve(static_cast<int>(r.i - 1), static_cast<int>(r.j - 1));
    c.t.push_back(r.t);
    c.x.push_back(r.x);
  }
  return data;
}

FunctionalDataset read_dataset(const std::filesystem::path& path) { return parse_dataset(read_text_file(path)); }

std::vector<std::string> write_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth) {
  const int p = truth.graph.p(), K = truth.effects.K;
  std::string edges = "from,to\n";
  for (int l = 0; l < p; ++l)
    for (int j = 0; j < p; ++j)
      if (truth.graph.edge(j, l)) edges += std::to_string(l + 1) + "," + std::to_string(j + 1) + "\n";
  write_text_file(dir / "truth_edges.csv", edges);

  std::string effects = "to,from,row,col,value\n";
  for (int j = 0; j < p; ++j)
    for (int l = 0; l < p; ++l) {
      if (!truth.graph.edge(j, l)) continue;
      const auto blk = truth.effects.block(j, l);
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) {
          effects += std::to_string(j + 1) + "," + std::to_string(l + 1) + "," + std::to_string(a + 1) + "," +
                     std::to_string(b + 1) + "," + format_double(blk(a, b)) + "\n";
        }
    }
  write_text_file(dir / "truth_effects.csv", effects);

  std::string basis;
  for (int k = 0; k < truth.basis.cols(); ++k) basis += (k ? ",phi_" : "phi_") + std::to_string(k + 1);
  basis += "\n";
  for (int r = 0; r < truth.basis.rows(); ++r) {
    for (int k = 0; k < truth.basis.cols(); ++k) basis += (k ? "," : "") + format_double(truth.basis(r, k));
    basis += "\n";
  }
  write_text_file(dir / "truth_basis.csv", basis);

  std::string noise = "node,variance\n";
  for (int j = 0; j < p; ++j) noise += std::to_string(j + 1) + "," + format_double(truth.noise_variance[j]) + "\n";
  write_text_file(dir / "truth_noise.csv", noise);

  std::string latent = "replicate,node,k,value\n";
  for (int i = 0; i < truth.latent.cols(); ++i)
    for (int j = 0; j < p; ++j)
      for (int k = 0; k < K; ++k) {
        latent += std::to_string(i + 1) + "," + std::to_string(j + 1) + "," + std::to_string(k + 1) + "," +
                  format_double(truth.latent(j * K + k, i)) + "\n";
      }
  write_text_file(dir / "truth_latent.csv", latent);
  return {"truth_edges.csv", "truth_effects.csv", "truth_basis.csv", "truth_noise.csv", "truth_latent.csv"};
}

CyclicGraph parse_edge_list(const std::string& text, int p) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines.front() != "from,to") throw ParseError("edge list header must be 'from,to'", 1);
  CyclicGraph g(p);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const long line_no = static_cast<long>(k + 1);
    if (lines[k].empty()) continue;
    const auto f = split_fields(lines[k]);
    long from = 0, to = 0;
    if (f.size() != 2 || !parse_index(f[0], from) || !parse_index(f[1], to)) throw ParseError("bad edge row", line_no);
    if (from < 1 || to < 1 || from > p || to > p) {
      throw InputError("edge " + std::to_string(from) + "->" + std::to_string(to) + " does not fit " +
                       std::to_string(p) + " nodes");
    }
    if (from == to) throw ParseError("self-loop in edge list", line_no);
    g.set_edge(static_cast<int>(to - 1), static_cast<int>(from - 1), true);
  }
  return g;
}

int read_truth_node_count(const std::filesystem::path& noise_csv) {
  const NumericTable t = parse_numeric_table(read_text_file(noise_csv));
  return static_cast<int>(t.rows.size());
}

std::string format_matrix(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

Eigen::MatrixXd parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  const auto lines = split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (lines[k].empty()) continue;
    std::vector<double> row;
    for (auto f : split_fields(lines[k])) {
      double v = 0.0;
      if (!parse_number(f, v)) throw ParseError("bad matrix entry", static_cast<long>(k + 1));
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("ragged matrix row", static_cast<long>(k + 1));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

std::string format_inclusion(const InclusionMatrix& P) { return format_matrix(P.transpose()); }

InclusionMatrix parse_inclusion(const std::string& text) {
  const Eigen::MatrixXd m = parse_matrix(text);
  if (m.rows() != m.cols()) throw InputError("inclusion matrix must be square");
  if ((m.array() < 0.0).any() || (m.array() > 1.0).any()) throw InputError("inclusion entries must lie in [0, 1]");
  return m.transpose();
}

std::vector<double> NumericTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] != name) continue;
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
  throw InputError("no column '" + name + "'");
}

NumericTable parse_numeric_table(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("empty table");
  NumericTable t;
  for (auto f : split_fields(lines.front())) t.header.emplace_back(f);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (lines[k].empty()) continue;
    const auto f = split_fields(lines[k]);
    if (f.size() != t.header.size()) throw ParseError("wrong field count", static_cast<long>(k + 1));
    std::vector<double> row;
    for (auto v : f) {
      double x = 0.0;
      if (!parse_number(v, x)) throw ParseError("bad number", static_cast<long>(k + 1));
      row.push_back(x);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<std::string> write_samples(const std::filesystem::path& dir, const PosteriorSamples& s) {
  const int p = s.p, pK = s.p * s.K;
  const std::size_t N = s.size();

  std::string edges = "iteration";
  for (int l = 0; l < p; ++l)
    for (int j = 0; j < p; ++j)
      if (j != l) edges += ",e_" + std::to_string(l + 1) + "_" + std::to_string(j + 1);
  edges += "\n";
  for (std::size_t d = 0; d < N; ++d) {
    edges += std::to_string(s.iteration[d]);
    for (int l = 0; l < p; ++l)
      for (int j = 0; j < p; ++j)
        if (j != l) edges += s.E[d].edge(j, l) ? ",1" : ",0";
    edges += "\n";
  }
  write_text_file(dir / "samples_edges.csv", edges);

  std::string effects = "iteration";
  for (int r = 0; r < pK; ++r)
    for (int c = 0; c < pK; ++c) effects += ",b_" + std::to_string(r + 1) + "_" + std::to_string(c + 1);
  effects += "\n";
  for (std::size_t d = 0; d < N; ++d) {
    effects += std::to_string(s.iteration[d]);
    for (int r = 0; r < pK; ++r)
      for (int c = 0; c < pK; ++c) effects += "," + format_double(s.B[d](r, c));
    effects += "\n";
  }
  write_text_file(dir / "samples_effects.csv", effects);

  std::string scalars = "iteration,gamma,rho";
  for (int j = 0; j < p; ++j) scalars += ",sigma_" + std::to_string(j + 1);
  scalars += "\n";
  for (std::size_t d = 0; d < N; ++d) {
    scalars += std::to_string(s.iteration[d]) + "," + format_double(s.gamma[d]) + "," + format_double(s.rho[d]);
    for (int j = 0; j < p; ++j) scalars += "," + format_double(s.sigma[d][j]);
    scalars += "\n";
  }
  write_text_file(dir / "samples_scalars.csv", scalars);

  std::string basis = "iteration";
  for (int k = 0; k < s.S; ++k)
    for (int r = 0; r < s.R; ++r) basis += ",A_" + std::to_string(r + 1) + "_" + std::to_string(k + 1);
  for (int k = 0; k < s.S; ++k) basis += ",lambda_" + std::to_string(k + 1);
  basis += "\n";
  for (std::size_t d = 0; d < N; ++d) {
    basis += std::to_string(s.iteration[d]);
    for (int k = 0; k < s.S; ++k)
      for (int r = 0; r < s.R; ++r) basis += "," + format_double(s.A[d](r, k));
    for (int k = 0; k < s.S; ++k) basis += "," + format_double(s.lambda[d][k]);
    basis += "\n";
  }
  write_text_file(dir / "samples_basis.csv", basis);

  std::string moves = "iteration,accepted,rejected,skipped,refreshed,z\n";
  for (std::size_t it = 0; it < s.moves_accepted.size(); ++it) {
    moves += std::to_string(it + 1) + "," + std::to_string(s.moves_accepted[it]) + "," +
             std::to_string(s.moves_rejected[it]) + "," + std::to_string(s.moves_skipped[it]) + "," +
             std::to_string(s.refresh_accepted[it]) + "," + format_double(s.z[it]) + "\n";
  }
  write_text_file(dir / "samples_moves.csv", moves);
  return {"samples_edges.csv", "samples_effects.csv", "samples_scalars.csv", "samples_basis.csv",
          "samples_moves.csv"};
}

std::string format_diagnostics(const std::vector<ScalarDiagnostic>& d) {
  std::string out = "parameter,ess,geweke_z\n";
  for (const auto& x : d) {
    out += x.name + "," + (x.ess ? format_double(*x.ess) : "NA") + "," + (x.geweke ? format_double(*x.geweke) : "NA") +
           "\n";
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[md[k] >> 4];
    out += hex[md[k] & 0xF];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text_file(path)); }

void write_manifest(const std::filesystem::path& dir, const Manifest& m, const std::vector<std::string>& files) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["version"] = FENCE_VERSION;
  j["seed"] = m.seed;
  j["started"] = m.started;
  j["finished"] = m.finished;
  j["failed"] = m.failed;
  if (m.failed) j["failure"] = m.failure;
  j["config"] = m.config;
  j["extra"] = m.extra;
  nlohmann::ordered_json digests = nlohmann::ordered_json::object();
  for (const auto& f : files) digests[f] = sha256_file(dir / f);
  j["files"] = digests;
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace fence
