#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fence/basis.hpp"
#include "fence/cli.hpp"
#include "fence/io.hpp"

using namespace fence;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "fence");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Exit status of the real executable, for the process-level contract.
int run_binary(const std::string& args) {
  const char* exe = std::getenv("FENCE_CLI");
  REQUIRE_MESSAGE(exe != nullptr, "FENCE_CLI is not set");
  const int status = std::system((std::string(exe) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

/// Digest from the system sha256sum tool.
std::string sha256sum(const fs::path& p) {
  const std::string cmd = "sha256sum '" + p.string() + "'";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[128] = {};
  const std::size_t got = fread(buf, 1, 64, pipe);
  pclose(pipe);
  return std::string(buf, got);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("fence_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

/// Short chain settings; `overrides` replaces or adds keys.
std::string tiny_fit(const std::map<std::string, std::string>& overrides = {}) {
  std::map<std::string, std::string> kv = {{"iterations", "10"}, {"burn_in", "0"}, {"thin", "1"},
                                           {"K", "auto"},        {"S", "2"},       {"R", "6"},
                                           {"M", "2"},           {"warm_start_sweeps", "2"}};
  for (const auto& [k, v] : overrides) kv[k] = v;
  std::string text;
  for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
  return text;
}

}  // namespace

TEST_CASE("simulate") {
  TempDir tmp("simulate");
  spit(tmp.path / "sim.cfg", "# minimal\nn = 2\np = 2\nd = 5\nseed = 7\n");
  const fs::path a = tmp.path / "a", b = tmp.path / "b";
  REQUIRE(run({"--config", (tmp.path / "sim.cfg").string(), "--out", a.string(), "simulate"}).code == 0);
  REQUIRE(run({"--config", (tmp.path / "sim.cfg").string(), "--out", b.string(), "simulate"}).code == 0);

  SUBCASE("row count and files") {
    const auto rows = lines(slurp(a / "dataset.csv"));
    CHECK(rows.front() == "replicate,node,t,value");
    CHECK(rows.size() == 1 + 2 * 2 * 5);
    for (const char* f : {"truth_edges.csv", "truth_effects.csv", "truth_basis.csv", "truth_noise.csv",
                          "truth_latent.csv", "manifest.json"})
      CHECK(fs::exists(a / f));
  }
  SUBCASE("manifest digests verify the files and repeat across runs") {
    const auto ma = manifest(a), mb = manifest(b);
    CHECK(ma["seed"] == 7);
    CHECK(ma["files"].size() == 6);
    for (const auto& [name, digest] : ma["files"].items()) {
      CHECK(digest.get<std::string>() == sha256sum(a / name));
      CHECK(mb["files"][name] == digest);
    }
    CHECK(ma["config"]["n"] == "2");
  }
  SUBCASE("seed flag overrides the config") {
    const fs::path c = tmp.path / "c";
    REQUIRE(run({"--config", (tmp.path / "sim.cfg").string(), "--seed", "8", "--out", c.string(), "simulate"}).code ==
            0);
    CHECK(slurp(c / "dataset.csv") != slurp(a / "dataset.csv"));
    CHECK(manifest(c)["seed"] == 8);
  }
}

TEST_CASE("signal-to-noise ratio recomputed from the emitted files") {
  TempDir tmp("snr");
  spit(tmp.path / "sim.cfg", "n = 20\np = 3\nd = 30\nsnr = 5\nseed = 3\n");
  REQUIRE(run({"--config", (tmp.path / "sim.cfg").string(), "--out", tmp.path.string(), "simulate"}).code == 0);
  // true basis: spline coefficients on a cubic B-spline system with R_true = 6 functions
  const auto basis_rows = lines(slurp(tmp.path / "truth_basis.csv"));
  const int K = static_cast<int>(split(basis_rows[0]).size());
  Eigen::MatrixXd A(static_cast<Eigen::Index>(basis_rows.size() - 1), K);
  for (std::size_t r = 1; r < basis_rows.size(); ++r) {
    const auto f = split(basis_rows[r]);
    for (int k = 0; k < K; ++k) A(static_cast<Eigen::Index>(r - 1), k) = std::stod(f[static_cast<std::size_t>(k)]);
  }
  const SplineSystem splines = build_spline_system(static_cast<int>(A.rows()));
  std::map<std::tuple<int, int, int>, double> latent;
  const auto latent_rows = lines(slurp(tmp.path / "truth_latent.csv"));
  for (std::size_t r = 1; r < latent_rows.size(); ++r) {
    const auto f = split(latent_rows[r]);
    latent[{std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2])}] = std::stod(f[3]);
  }
  std::map<int, double> noise;
  const auto noise_rows = lines(slurp(tmp.path / "truth_noise.csv"));
  for (std::size_t r = 1; r < noise_rows.size(); ++r) {
    const auto f = split(noise_rows[r]);
    noise[std::stoi(f[0])] = std::stod(f[1]);
  }
  std::map<int, std::pair<double, int>> abs_signal;
  const auto data_rows = lines(slurp(tmp.path / "dataset.csv"));
  for (std::size_t r = 1; r < data_rows.size(); ++r) {
    const auto f = split(data_rows[r]);
    const int i = std::stoi(f[0]), j = std::stoi(f[1]);
    const double t = std::stod(f[2]);
    const Eigen::RowVectorXd phi = evaluate_design(splines, std::vector<double>{t}) * A;
    double y = 0.0;
    for (int k = 0; k < K; ++k) y += latent.at({i, j, k + 1}) * phi[k];
    abs_signal[j].first += std::abs(y);
    abs_signal[j].second += 1;
  }
  for (const auto& [j, acc] : abs_signal) {
    const double snr = acc.first / acc.second / std::sqrt(noise.at(j));
    CHECK(std::abs(snr - 5.0) <= 1e-10);
  }
}

TEST_CASE("configuration errors exit with status 2") {
  TempDir tmp("badcfg");
  spit(tmp.path / "typo.cfg", "n = 2\npp = 3\n");
  const Result r = run({"--config", (tmp.path / "typo.cfg").string(), "--out", tmp.path.string(), "simulate"});
  CHECK(r.code == kExitInput);
  CHECK(r.err.find("line 2") != std::string::npos);
  CHECK(r.err.find("pp") != std::string::npos);

  spit(tmp.path / "value.cfg", "n = two\n");
  const Result v = run({"--config", (tmp.path / "value.cfg").string(), "--out", tmp.path.string(), "simulate"});
  CHECK(v.code == kExitInput);
  CHECK(v.err.find("line 1") != std::string::npos);

  CHECK(run({"--config", (tmp.path / "missing.cfg").string(), "simulate"}).code == kExitInput);
  CHECK(run({"frobnicate"}).code == kExitInput);
  CHECK(run({}).code == kExitInput);
  CHECK(run_binary("--config '" + (tmp.path / "typo.cfg").string() + "' simulate") == 2);
}

TEST_CASE("fit") {
  TempDir tmp("fit");
  spit(tmp.path / "sim.cfg", "n = 8\np = 3\nd = 15\nK_true = 2\nseed = 4\n");
  spit(tmp.path / "fit.cfg", tiny_fit());
  REQUIRE(run({"--config", (tmp.path / "sim.cfg").string(), "--out", (tmp.path / "sim").string(), "simulate"}).code ==
          0);
  const std::string dataset = (tmp.path / "sim" / "dataset.csv").string();
  const std::string cfg = (tmp.path / "fit.cfg").string();

  const auto start = std::chrono::steady_clock::now();
  const Result r = run({"--config", cfg, "--out", (tmp.path / "fit1").string(), "fit", dataset});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE(r.code == 0);
  CHECK(seconds < 10.0);

  SUBCASE("outputs and the chosen K") {
    for (const char* f : {"samples_edges.csv", "samples_effects.csv", "samples_scalars.csv", "inclusion.csv",
                          "diagnostics.csv", "manifest.json"})
      CHECK(fs::exists(tmp.path / "fit1" / f));
    const auto m = manifest(tmp.path / "fit1");
    CHECK(m["extra"]["K_selection"] == "auto");
    const int K = std::stoi(m["extra"]["K"].get<std::string>());
    CHECK(K >= 1);
    CHECK(K <= 6);
    CHECK(m["extra"]["retained"] == "10");
    CHECK(lines(slurp(tmp.path / "fit1" / "samples_edges.csv")).size() == 11);
  }
  SUBCASE("rerun is byte-identical") {
    REQUIRE(run({"--config", cfg, "--out", (tmp.path / "fit2").string(), "fit", dataset}).code == 0);
    const auto m1 = manifest(tmp.path / "fit1"), m2 = manifest(tmp.path / "fit2");
    CHECK(m1["files"] == m2["files"]);
    CHECK(slurp(tmp.path / "fit1" / "samples_effects.csv") == slurp(tmp.path / "fit2" / "samples_effects.csv"));
  }
  SUBCASE("progress goes to standard error") {
    spit(tmp.path / "long.cfg", tiny_fit({{"iterations", "100"}}));
    const Result p =
        run({"--config", (tmp.path / "long.cfg").string(), "--out", (tmp.path / "fit3").string(), "fit", dataset});
    CHECK(p.code == 0);
    CHECK(p.err.find("iteration 100/100") != std::string::npos);
  }
  SUBCASE("diagnose") {
    const Result d = run({"diagnose", (tmp.path / "fit1").string()});
    CHECK(d.code == 0);
    CHECK(d.out.find("gamma") != std::string::npos);
    CHECK(d.out.find("edge_count") != std::string::npos);
  }
}

TEST_CASE("fit input and numerical errors") {
  TempDir tmp("fit_errors");
  spit(tmp.path / "fit.cfg", tiny_fit());
  const std::string cfg = (tmp.path / "fit.cfg").string();
  SUBCASE("malformed row names the row") {
    spit(tmp.path / "bad.csv", "replicate,node,t,value\n1,1,0.1,0.5\n1,1,0.2,abc\n");
    const Result r = run({"--config", cfg, "--out", (tmp.path / "o").string(), "fit", (tmp.path / "bad.csv").string()});
    CHECK(r.code == kExitInput);
    CHECK(r.err.find("line 3") != std::string::npos);
    CHECK(run_binary("--config '" + cfg + "' --out '" + (tmp.path / "o").string() + "' fit '" +
                     (tmp.path / "bad.csv").string() + "'") == 2);
  }
  SUBCASE("location outside the unit interval") {
    spit(tmp.path / "bad.csv", "replicate,node,t,value\n1,1,1.5,0.5\n");
    CHECK(run({"--config", cfg, "--out", (tmp.path / "o").string(), "fit", (tmp.path / "bad.csv").string()}).code ==
          kExitInput);
  }
  SUBCASE("numerical failure exits 3 with flagged partial outputs") {
    // values near the overflow threshold make every precision matrix non-finite
    std::string text = "replicate,node,t,value\n";
    for (int i = 1; i <= 3; ++i)
      for (int j = 1; j <= 2; ++j)
        for (int u = 0; u < 6; ++u)
          text += std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(u / 5.0) + "," +
                  (u % 2 ? "1e200" : "-1e200") + "\n";
    spit(tmp.path / "huge.csv", text);
    spit(tmp.path / "fixed.cfg", tiny_fit({{"K", "1"}}));
    const fs::path out = tmp.path / "o";
    const Result r = run({"--config", (tmp.path / "fixed.cfg").string(), "--out", out.string(), "fit",
                          (tmp.path / "huge.csv").string()});
    CHECK(r.code == kExitNumerical);
    const auto m = manifest(out);
    CHECK(m["failed"] == true);
    CHECK(m["failure"].get<std::string>().size() > 0);
  }
}

TEST_CASE("evaluate") {
  TempDir tmp("evaluate");
  // truth {1->2, 2->3}; estimate {1->2, 3->1}; rows are parents
  spit(tmp.path / "truth.csv", "from,to\n1,2\n2,3\n");
  spit(tmp.path / "incl.csv", "0,1,0\n0,0,0\n1,0,0\n");
  const Result r = run({"--out", (tmp.path / "e").string(), "evaluate", (tmp.path / "incl.csv").string(),
                        (tmp.path / "truth.csv").string()});
  REQUIRE(r.code == 0);
  const std::string expected = "{\n  \"TP\": 1,\n  \"FP\": 1,\n  \"TN\": 3,\n  \"FN\": 1,\n  \"TPR\": 0.5,\n"
                               "  \"FDR\": 0.5,\n  \"MCC\": 0.25\n}\n";
  CHECK(slurp(tmp.path / "e" / "metrics.json") == expected);
  CHECK(r.out == expected);
  CHECK(lines(slurp(tmp.path / "e" / "metrics.csv"))[1] == "0.5,1,1,3,1,0.5,0.5,0.25");

  SUBCASE("default threshold includes ties at 0.5") {
    spit(tmp.path / "half.csv", "0,0.5,0\n0,0,0.5\n0,0,0\n");
    const Result h = run({"--out", (tmp.path / "h").string(), "evaluate", (tmp.path / "half.csv").string(),
                          (tmp.path / "truth.csv").string()});
    CHECK(h.out.find("\"MCC\": 1.0") != std::string::npos);
    const Result s = run({"--threshold", "0.6", "--out", (tmp.path / "h").string(), "evaluate",
                          (tmp.path / "half.csv").string(), (tmp.path / "truth.csv").string()});
    CHECK(s.out.find("\"TP\": 0") != std::string::npos);
  }
  SUBCASE("truth against itself") {
    spit(tmp.path / "self.csv", "0,1,0\n0,0,1\n0,0,0\n");
    for (const char* th : {"0.1", "0.5", "0.99"}) {
      const Result s = run({"--threshold", th, "--out", (tmp.path / "s").string(), "evaluate",
                            (tmp.path / "self.csv").string(), (tmp.path / "truth.csv").string()});
      CHECK(s.out.find("\"MCC\": 1.0") != std::string::npos);
    }
  }
  SUBCASE("mismatched node counts") {
    spit(tmp.path / "two.csv", "0,1\n0,0\n");
    spit(tmp.path / "t4" / "truth_noise.csv", "node,variance\n1,0.1\n2,0.1\n3,0.1\n4,0.1\n");
    spit(tmp.path / "t4" / "truth_edges.csv", "from,to\n");
    CHECK(run({"--out", (tmp.path / "m").string(), "evaluate", (tmp.path / "two.csv").string(),
               (tmp.path / "t4").string()})
              .code == kExitInput);
    CHECK(run({"--out", (tmp.path / "m").string(), "evaluate", (tmp.path / "two.csv").string(),
               (tmp.path / "truth.csv").string()})
              .code == kExitInput);
  }
}

TEST_CASE("study") {
  TempDir tmp("study");
  spit(tmp.path / "study.cfg", tiny_fit({{"K", "2"}, {"K_true", "2"}, {"study_n", "10"}, {"study_p", "3"},
                                            {"study_d", "12"}, {"replicates", "2"}, {"seed", "5"}}));
  const std::string cfg = (tmp.path / "study.cfg").string();
  const Result r = run({"--config", cfg, "--out", tmp.path.string(), "study"});
  REQUIRE(r.code == 0);
  const auto table = lines(slurp(tmp.path / "table.csv"));
  REQUIRE(table.size() == 2);
  CHECK(table[0] == "n,p,d,law,graph_class,replicates,failures,TPR,FDR,MCC");
  const auto row = split(table[1]);
  CHECK(row[0] == "10");
  CHECK(row[5] == "2");
  CHECK(row[7].find('(') != std::string::npos);

  const std::string cell = "n10_p3_d12_laplace_unrestricted_cyclic.csv";
  const auto first = lines(slurp(tmp.path / cell));
  CHECK(split(first[1])[2] == "0");

  SUBCASE("rerun resumes completed replicates") {
    const Result again = run({"--config", cfg, "--out", tmp.path.string(), "--jobs", "2", "study"});
    CHECK(again.code == 0);
    const auto second = lines(slurp(tmp.path / cell));
    CHECK(split(second[1])[2] == "1");
    CHECK(split(second[2])[2] == "1");
    CHECK(slurp(tmp.path / "table.csv") == lines(slurp(tmp.path / "table.csv")).front() + "\n" + table[1] + "\n");
  }
}

TEST_CASE("output root from the environment") {
  CommandOptions opt;
  setenv("FENCE_OUTPUT_ROOT", "/tmp/fence_root", 1);
  CHECK(resolve_output_dir(opt, "fit") == fs::path("/tmp/fence_root/fit"));
  unsetenv("FENCE_OUTPUT_ROOT");
  CHECK(resolve_output_dir(opt, "fit") == fs::path("./fit"));
  opt.out = "/x/y";
  CHECK(resolve_output_dir(opt, "fit") == fs::path("/x/y"));
}
