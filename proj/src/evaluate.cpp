#include "fence/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fence/error.hpp"

namespace fence {

namespace {

std::pair<double, double> mean_and_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Initial monotone sequence estimate of the asymptotic variance of the mean, times n.
/// Returns nullopt when the series has zero variance.
std::optional<double> long_run_variance(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
    return s / static_cast<double>(n);
  };
  const double g0 = autocov(0);
  if (!(g0 > 1e-300 * (1.0 + mean * mean))) return std::nullopt;
  // pair sums Gamma_m = c(2m) + c(2m+1); keep the positive, monotonically non-increasing prefix
  double total = -g0;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = autocov(2 * m) + autocov(2 * m + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, previous);
    total += 2.0 * pair;
    previous = pair;
  }
  return std::max(total, 1e-12 * g0);
}

}  // namespace

InclusionMatrix inclusion_probabilities(std::span<const CyclicGraph> draws) {
  if (draws.empty()) throw InputError("no retained draws for inclusion probabilities");
  const int p = draws.front().p();
  InclusionMatrix P = InclusionMatrix::Zero(p, p);
  for (const auto& g : draws) {
    if (g.p() != p) throw InputError("draws of different sizes");
    P += g.to_matrix();
  }
  return P / static_cast<double>(draws.size());
}

InclusionMatrix inclusion_probabilities(const PosteriorSamples& samples) {
  return inclusion_probabilities(std::span<const CyclicGraph>(samples.E));
}

CyclicGraph estimate_graph(const InclusionMatrix& P, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidConfiguration("threshold must lie in (0, 1)");
  if (P.rows() != P.cols()) throw InputError("inclusion matrix must be square");
  const int p = static_cast<int>(P.rows());
  CyclicGraph g(p);
  for (int j = 0; j < p; ++j)
    for (int l = 0; l < p; ++l)
      if (j != l && P(j, l) >= threshold) g.set_edge(j, l, true);
  return g;
}

RecoveryMetrics recovery_metrics(const CyclicGraph& estimated, const CyclicGraph& truth) {
  if (estimated.p() != truth.p()) throw InputError("graphs have different node counts");
  RecoveryMetrics m;
  const int p = truth.p();
  for (int j = 0; j < p; ++j)
    for (int l = 0; l < p; ++l) {
      if (j == l) continue;
      const bool e = estimated.edge(j, l), t = truth.edge(j, l);
      if (e && t) ++m.tp;
      else if (e) ++m.fp;
      else if (t) ++m.fn;
      else ++m.tn;
    }
  const double tp = static_cast<double>(m.tp), fp = static_cast<double>(m.fp);
  const double tn = static_cast<double>(m.tn), fn = static_cast<double>(m.fn);
  m.tpr = m.tp + m.fn == 0 ? 1.0 : tp / (tp + fn);
  m.fdr = m.tp + m.fp == 0 ? 0.0 : fp / (tp + fp);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  m.mcc = denom == 0.0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(denom);
  return m;
}

std::optional<double> effective_sample_size(std::span<const double> x) {
  const auto lrv = long_run_variance(x);
  if (!lrv) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double g0 = 0.0;
  for (double v : x) g0 += (v - mean) * (v - mean);
  g0 /= n;
  return n * g0 / *lrv;
}

std::optional<double> geweke_z(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 10) return std::nullopt;
  const std::size_t na = std::max<std::size_t>(2, n / 10);
  const std::size_t nb = std::max<std::size_t>(2, n / 2);
  const auto a = x.subspan(0, na);
  const auto b = x.subspan(n - nb, nb);
  const auto va = long_run_variance(a);
  const auto vb = long_run_variance(b);
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(na);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(nb);
  const double var = (va ? *va : 0.0) / static_cast<double>(na) + (vb ? *vb : 0.0) / static_cast<double>(nb);
  if (!(var > 0.0)) return std::nullopt;
  return (ma - mb) / std::sqrt(var);
}

std::vector<ScalarDiagnostic> chain_diagnostics(const std::vector<std::string>& names,
                                                const std::vector<std::vector<double>>& series) {
  if (names.size() != series.size()) throw InputError("names and series differ in length");
  std::vector<ScalarDiagnostic> out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (series[k].size() < 10) throw InputError("diagnostics need at least 10 retained draws");
    out.push_back({names[k], effective_sample_size(series[k]), geweke_z(series[k])});
  }
  return out;
}

std::vector<ScalarDiagnostic> chain_diagnostics(const PosteriorSamples& samples) {
  std::vector<std::string> names{"gamma", "rho"};
  std::vector<std::vector<double>> series{samples.gamma, samples.rho};
  for (int j = 0; j < samples.p; ++j) {
    names.push_back("sigma_" + std::to_string(j + 1));
    std::vector<double> v;
    for (const auto& s : samples.sigma) v.push_back(s[j]);
    series.push_back(std::move(v));
  }
  names.push_back("edge_count");
  std::vector<double> edges;
  for (const auto& g : samples.E) edges.push_back(g.edge_count());
  series.push_back(std::move(edges));
  return chain_diagnostics(names, series);
}

std::vector<StudyCell> StudyConfig::cells() const {
  std::vector<StudyCell> out;
  for (int nn : n)
    for (int pp : p)
      for (int dd : d)
        for (auto law : laws)
          for (auto gc : graph_classes) out.push_back({nn, pp, dd, law, gc});
  return out;
}

std::uint64_t replicate_data_seed(std::uint64_t study_seed, int r) {
  return derive_seed(study_seed, 101, static_cast<std::uint64_t>(r));
}

std::uint64_t replicate_chain_seed(std::uint64_t study_seed, int r) {
  return derive_seed(study_seed, 202, static_cast<std::uint64_t>(r));
}

Fitter default_fitter() {
  return [](const FunctionalDataset& data, const ChainConfig& cfg) {
    const PosteriorSamples samples = run_chain(data, cfg);
    if (samples.failed) throw NumericalError("chain failed: " + samples.failure);
    return inclusion_probabilities(samples);
  };
}

int CellSummary::successes() const {
  return static_cast<int>(std::count_if(replicates.begin(), replicates.end(), [](const auto& r) { return r.ok; }));
}

int CellSummary::failures() const { return static_cast<int>(replicates.size()) - successes(); }

namespace {
template <typename F>
std::pair<double, double> summarize(const std::vector<ReplicateResult>& reps, F field) {
  std::vector<double> v;
  for (const auto& r : reps)
    if (r.ok) v.push_back(field(r.metrics));
  return mean_and_sd(v);
}
}  // namespace

std::pair<double, double> CellSummary::tpr() const {
  return summarize(replicates, [](const RecoveryMetrics& m) { return m.tpr; });
}
std::pair<double, double> CellSummary::fdr() const {
  return summarize(replicates, [](const RecoveryMetrics& m) { return m.fdr; });
}
std::pair<double, double> CellSummary::mcc() const {
  return summarize(replicates, [](const RecoveryMetrics& m) { return m.mcc; });
}

std::string cell_name(const StudyCell& c) {
  return "n" + std::to_string(c.n) + "_p" + std::to_string(c.p) + "_d" + std::to_string(c.d) + "_" +
         to_string(c.law) + "_" + to_string(c.graph_class);
}

std::string mean_sd(std::pair<double, double> v) {
  if (std::isnan(v.first)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v.first << "(" << v.second << ")";
  return os.str();
}

std::string format_study_table(const std::vector<CellSummary>& cells) {
  std::ostringstream os;
  os << "n,p,d,law,graph_class,replicates,failures,TPR,FDR,MCC\n";
  for (const auto& c : cells) {
    os << c.cell.n << ',' << c.cell.p << ',' << c.cell.d << ',' << to_string(c.cell.law) << ','
       << to_string(c.cell.graph_class) << ',' << c.replicates.size() << ',' << c.failures() << ','
       << mean_sd(c.tpr()) << ',' << mean_sd(c.fdr()) << ',' << mean_sd(c.mcc()) << '\n';
  }
  return os.str();
}

std::string metrics_json(const RecoveryMetrics& m) {
  nlohmann::ordered_json j;
  j["TP"] = m.tp;
  j["FP"] = m.fp;
  j["TN"] = m.tn;
  j["FN"] = m.fn;
  j["TPR"] = m.tpr;
  j["FDR"] = m.fdr;
  j["MCC"] = m.mcc;
  return j.dump(2) + "\n";
}

RecoveryMetrics parse_metrics_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RecoveryMetrics m;
    m.tp = j.at("TP").get<long>();
    m.fp = j.at("FP").get<long>();
    m.tn = j.at("TN").get<long>();
    m.fn = j.at("FN").get<long>();
    m.tpr = j.at("TPR").get<double>();
    m.fdr = j.at("FDR").get<double>();
    m.mcc = j.at("MCC").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad metrics file: ") + e.what());
  }
}

std::vector<CellSummary> run_study(const StudyConfig& cfg, const Fitter& fitter) {
  if (cfg.replicates < 1) throw InvalidConfiguration("replicates must be at least 1");
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw InvalidConfiguration("threshold must lie in (0, 1)");
  const auto cells = cfg.cells();
  if (cells.empty()) throw InvalidConfiguration("study grid is empty");
  std::vector<CellSummary> out(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    out[c].cell = cells[c];
    out[c].replicates.resize(static_cast<std::size_t>(cfg.replicates));
  }

  auto run_one = [&](std::size_t c, int r) {
    ReplicateResult& res = out[c].replicates[static_cast<std::size_t>(r)];
    std::filesystem::path dir;
    try {
      if (!cfg.out_dir.empty()) {
        dir = cfg.out_dir / cell_name(cells[c]) / ("rep_" + std::to_string(r + 1));
        const auto metrics_path = dir / "metrics.json";
        if (std::filesystem::exists(metrics_path)) {
          std::ifstream in(metrics_path);
          std::stringstream ss;
          ss << in.rdbuf();
          res.metrics = parse_metrics_json(ss.str());
          res.ok = true;
          res.resumed = true;
          return;
        }
      }
      DgpConfig dgp = cfg.dgp;
      dgp.n = cells[c].n;
      dgp.p = cells[c].p;
      dgp.d = cells[c].d;
      dgp.law.kind = cells[c].law;
      dgp.graph_class = cells[c].graph_class;
      dgp.seed = replicate_data_seed(cfg.seed, r);
      ChainConfig chain = cfg.chain;
      chain.seed = replicate_chain_seed(cfg.seed, r);
      const auto [data, truth] = generate_dataset(dgp);
      const InclusionMatrix P = fitter(data, chain);
      res.metrics = recovery_metrics(estimate_graph(P, cfg.threshold), truth.graph);
      res.ok = true;
      if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        const auto tmp = dir / "metrics.json.tmp";
        {
          std::ofstream f(tmp, std::ios::binary);
          f << metrics_json(res.metrics);
        }
        std::filesystem::rename(tmp, dir / "metrics.json");
      }
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
    }
  };

  std::vector<std::pair<std::size_t, int>> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (int r = 0; r < cfg.replicates; ++r) tasks.emplace_back(c, r);
  const int workers = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(tasks.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) run_one(tasks[t].first, tasks[t].second);
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace fence
