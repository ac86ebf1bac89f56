#include "fence/cli.hpp"

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "fence/config.hpp"
#include "fence/error.hpp"
#include "fence/evaluate.hpp"
#include "fence/inference.hpp"
#include "fence/io.hpp"
#include "fence/simulate.hpp"

namespace fence {

namespace {

RunConfig load_config(const CommandOptions& opt) {
  RunConfig cfg;
  if (opt.config) cfg = apply_config(KeyValueConfig::load(*opt.config));
  if (opt.seed) {
    cfg.set_seed(*opt.seed);
    cfg.study.seed = *opt.seed;
  }
  if (opt.threshold) cfg.threshold = cfg.study.threshold = *opt.threshold;
  if (opt.jobs) {
    if (*opt.jobs < 1) throw InvalidConfiguration("--jobs must be at least 1");
    cfg.study.jobs = *opt.jobs;
  }
  cfg.study.dgp = cfg.dgp;
  cfg.study.chain = cfg.chain;
  return cfg;
}

/// Runs `body`, mapping library errors to exit codes.
template <typename F>
int guarded(std::ostream& err, F body) {
  try {
    return body();
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace

std::filesystem::path resolve_output_dir(const CommandOptions& opt, const std::string& name) {
  if (opt.out) return *opt.out;
  const char* root = std::getenv("FENCE_OUTPUT_ROOT");
  return std::filesystem::path(root && *root ? root : ".") / name;
}

int cmd_simulate(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_config(opt);
    const auto dir = resolve_output_dir(opt, "simulate");
    Manifest m;
    m.command = "simulate";
    m.seed = cfg.seed;
    m.config = config_snapshot(cfg);
    m.started = utc_timestamp();
    const auto [data, truth] = generate_dataset(cfg.dgp);
    write_dataset(dir / "dataset.csv", data);
    std::vector<std::string> files{"dataset.csv"};
    for (const auto& f : write_ground_truth(dir, truth)) files.push_back(f);
    for (int j = 0; j < cfg.dgp.p; ++j) {
      if (truth.noise_variance[j] > 0.0) {
        m.extra["realized_snr_" + std::to_string(j + 1)] = format_double(realized_snr(truth, data, j));
      }
    }
    m.extra["edges"] = std::to_string(truth.graph.edge_count());
    m.finished = utc_timestamp();
    write_manifest(dir, m, files);
    out << "wrote " << (dir / "dataset.csv").string() << " (" << data.total_points() << " rows)\n";
    return kExitOk;
  });
}

int cmd_fit(const std::filesystem::path& dataset, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = load_config(opt);
    if (opt.jobs) cfg.chain.threads = *opt.jobs;
    const auto dir = resolve_output_dir(opt, "fit");
    const FunctionalDataset data = read_dataset(dataset);
    Manifest m;
    m.command = "fit";
    m.seed = cfg.seed;
    m.config = config_snapshot(cfg);
    m.config["dataset"] = dataset.string();
    m.started = utc_timestamp();

    ChainHooks hooks;
    const int total = cfg.chain.iterations;
    hooks.progress = [&](int it, const ChainState& s) {
      err << "iteration " << it << "/" << total << "  edges " << s.E.edge_count() << "  z " << s.z << "\n";
    };
    PosteriorSamples samples;
    try {
      samples = run_chain(data, cfg.chain, hooks);
    } catch (const NumericalError& e) {
      m.failed = true;
      m.failure = e.what();
      m.finished = utc_timestamp();
      write_manifest(dir, m, {});
      throw;
    }

    std::vector<std::string> files = write_samples(dir, samples);
    if (samples.size() > 0) {
      write_text_file(dir / "inclusion.csv", format_inclusion(inclusion_probabilities(samples)));
      files.push_back("inclusion.csv");
    }
    if (samples.size() >= 10) {
      write_text_file(dir / "diagnostics.csv", format_diagnostics(chain_diagnostics(samples)));
      files.push_back("diagnostics.csv");
    }
    long accepted = 0, attempted = 0;
    for (std::size_t it = 0; it < samples.moves_accepted.size(); ++it) {
      if (static_cast<int>(it) < cfg.chain.burn_in) continue;
      accepted += samples.moves_accepted[it];
      attempted += samples.moves_accepted[it] + samples.moves_rejected[it] + samples.moves_skipped[it];
    }
    m.extra["K"] = std::to_string(samples.K);
    m.extra["K_selection"] = cfg.chain.K == 0 ? "auto" : "fixed";
    m.extra["S"] = std::to_string(samples.S);
    m.extra["retained"] = std::to_string(samples.size());
    m.extra["post_burn_in_acceptance"] = attempted > 0 ? format_double(static_cast<double>(accepted) / attempted) : "NA";
    m.failed = samples.failed;
    m.failure = samples.failure;
    m.finished = utc_timestamp();
    write_manifest(dir, m, files);
    if (samples.failed) {
      err << "numerical failure at iteration " << samples.failed_iteration << ": " << samples.failure
          << " (partial outputs written)\n";
      return kExitNumerical;
    }
    out << "wrote " << samples.size() << " retained draws to " << dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_evaluate(const std::filesystem::path& inclusion, const std::filesystem::path& truth, const CommandOptions& opt,
                 std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_config(opt);
    const InclusionMatrix P = parse_inclusion(read_text_file(inclusion));
    const int p = static_cast<int>(P.rows());
    CyclicGraph true_graph;
    if (std::filesystem::is_directory(truth)) {
      const int truth_p = read_truth_node_count(truth / "truth_noise.csv");
      if (truth_p != p) {
        throw InputError("inclusion matrix has " + std::to_string(p) + " nodes, truth has " + std::to_string(truth_p));
      }
      true_graph = parse_edge_list(read_text_file(truth / "truth_edges.csv"), p);
    } else {
      true_graph = parse_edge_list(read_text_file(truth), p);
    }
    const RecoveryMetrics m = recovery_metrics(estimate_graph(P, cfg.threshold), true_graph);
    const auto dir = resolve_output_dir(opt, "evaluate");
    const std::string json = metrics_json(m);
    write_text_file(dir / "metrics.json", json);
    write_text_file(dir / "metrics.csv", "threshold,TP,FP,TN,FN,TPR,FDR,MCC\n" + format_double(cfg.threshold) + "," +
                                             std::to_string(m.tp) + "," + std::to_string(m.fp) + "," +
                                             std::to_string(m.tn) + "," + std::to_string(m.fn) + "," +
                                             format_double(m.tpr) + "," + format_double(m.fdr) + "," +
                                             format_double(m.mcc) + "\n");
    out << json;
    return kExitOk;
  });
}

int cmd_study(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = load_config(opt);
    const auto dir = resolve_output_dir(opt, "study");
    cfg.study.out_dir = dir / "replicates";
    Manifest m;
    m.command = "study";
    m.seed = cfg.seed;
    m.config = config_snapshot(cfg);
    m.config["jobs"] = std::to_string(cfg.study.jobs);
    m.started = utc_timestamp();
    const auto cells = run_study(cfg.study);

    std::vector<std::string> files;
    bool every_cell_ok = true;
    for (const auto& c : cells) {
      std::string rows = "replicate,ok,resumed,TP,FP,TN,FN,TPR,FDR,MCC,error\n";
      for (std::size_t r = 0; r < c.replicates.size(); ++r) {
        const auto& rep = c.replicates[r];
        std::string error = rep.error;
        for (char& ch : error)
          if (ch == ',' || ch == '\n') ch = ';';
        rows += std::to_string(r + 1) + "," + (rep.ok ? "1" : "0") + "," + (rep.resumed ? "1" : "0") + ",";
        if (rep.ok) {
          rows += std::to_string(rep.metrics.tp) + "," + std::to_string(rep.metrics.fp) + "," +
                  std::to_string(rep.metrics.tn) + "," + std::to_string(rep.metrics.fn) + "," +
                  format_double(rep.metrics.tpr) + "," + format_double(rep.metrics.fdr) + "," +
                  format_double(rep.metrics.mcc);
        } else {
          rows += ",,,,,,";
        }
        rows += "," + error + "\n";
      }
      const std::string name = cell_name(c.cell) + ".csv";
      write_text_file(dir / name, rows);
      files.push_back(name);
      if (c.successes() == 0) every_cell_ok = false;
      if (c.failures() > 0) err << cell_name(c.cell) << ": " << c.failures() << " failed replicate(s)\n";
    }
    const std::string table = format_study_table(cells);
    write_text_file(dir / "table.csv", table);
    files.push_back("table.csv");
    m.finished = utc_timestamp();
    m.failed = !every_cell_ok;
    if (!every_cell_ok) m.failure = "a cell has no successful replicate";
    write_manifest(dir, m, files);
    out << table;
    return every_cell_ok ? kExitOk : kExitNumerical;
  });
}

int cmd_diagnose(const std::filesystem::path& fit_dir, const CommandOptions& opt, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const NumericTable scalars = parse_numeric_table(read_text_file(fit_dir / "samples_scalars.csv"));
    const NumericTable edges = parse_numeric_table(read_text_file(fit_dir / "samples_edges.csv"));
    std::vector<std::string> names;
    std::vector<std::vector<double>> series;
    for (const auto& h : scalars.header) {
      if (h == "iteration") continue;
      names.push_back(h);
      series.push_back(scalars.column(h));
    }
    std::vector<double> count;
    for (const auto& row : edges.rows) {
      double c = 0.0;
      for (std::size_t k = 1; k < row.size(); ++k) c += row[k];
      count.push_back(c);
    }
    names.push_back("edge_count");
    series.push_back(count);
    const std::string text = format_diagnostics(chain_diagnostics(names, series));
    const auto dir = opt.out ? *opt.out : fit_dir;
    write_text_file(dir / "diagnostics.csv", text);
    out << text;
    return kExitOk;
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cyclic causal discovery for multivariate functional data"};
  app.require_subcommand(1);
  app.fallthrough();
  CommandOptions opt;
  std::string config, out_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  double threshold = 0.5;
  auto* o_config = app.add_option("--config", config, "key = value configuration file");
  auto* o_out = app.add_option("--out", out_dir, "output directory");
  auto* o_seed = app.add_option("--seed", seed, "random seed (overrides the config)");
  auto* o_jobs = app.add_option("--jobs", jobs, "worker threads");
  auto* o_threshold = app.add_option("--threshold", threshold, "inclusion probability threshold");

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset and its ground truth");
  auto* fit = app.add_subcommand("fit", "run the sampler on a dataset");
  std::string dataset;
  fit->add_option("dataset", dataset, "dataset CSV")->required();
  auto* eval = app.add_subcommand("evaluate", "score an inclusion matrix against the truth");
  std::string inclusion, truth;
  eval->add_option("inclusion", inclusion, "inclusion matrix CSV")->required();
  eval->add_option("truth", truth, "truth directory or edge list CSV")->required();
  auto* study = app.add_subcommand("study", "replicated simulation study");
  auto* diag = app.add_subcommand("diagnose", "chain diagnostics of a fit directory");
  std::string fit_dir;
  diag->add_option("fit_dir", fit_dir, "directory written by fit")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return kExitInput;
  }
  if (o_config->count()) opt.config = config;
  if (o_out->count()) opt.out = out_dir;
  if (o_seed->count()) opt.seed = seed;
  if (o_jobs->count()) opt.jobs = jobs;
  if (o_threshold->count()) opt.threshold = threshold;

  if (sim->parsed()) return cmd_simulate(opt, out, err);
  if (fit->parsed()) return cmd_fit(dataset, opt, out, err);
  if (eval->parsed()) return cmd_evaluate(inclusion, truth, opt, out, err);
  if (study->parsed()) return cmd_study(opt, out, err);
  if (diag->parsed()) return cmd_diagnose(fit_dir, opt, out, err);
  return kExitInput;
}

}  // namespace fence
