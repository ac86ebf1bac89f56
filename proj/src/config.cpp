#include "fence/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "fence/error.hpp"
#include "fence/io.hpp"

namespace fence {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const KeyValueConfig::Entry& e) {
  if (e.value == "inf" || e.value == "infinity") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto* end = e.value.data() + e.value.size();
  const auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(key + ": expected a number, got '" + e.value + "'", e.line);
  return v;
}

long long to_integer(const std::string& key, const KeyValueConfig::Entry& e) {
  long long v = 0;
  const auto* end = e.value.data() + e.value.size();
  const auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(key + ": expected an integer, got '" + e.value + "'", e.line);
  return v;
}

int to_int(const std::string& key, const KeyValueConfig::Entry& e) {
  const long long v = to_integer(key, e);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ParseError(key + ": value out of range", e.line);
  }
  return static_cast<int>(v);
}

bool to_bool(const std::string& key, const KeyValueConfig::Entry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ParseError(key + ": expected true or false, got '" + e.value + "'", e.line);
}

std::uint64_t to_seed(const std::string& key, const KeyValueConfig::Entry& e) {
  std::uint64_t v = 0;
  const auto* end = e.value.data() + e.value.size();
  const auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(key + ": expected a non-negative integer", e.line);
  return v;
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const KeyValueConfig::Entry& e, F convert) {
  std::vector<T> out;
  for (const auto& item : split_list(e.value)) out.push_back(convert(KeyValueConfig::Entry{item, e.line}));
  if (out.empty()) throw ParseError(key + ": empty list", e.line);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const KeyValueConfig::Entry&)>;

template <typename F>
Setter wrap(F f) {
  // converts library input errors into parse errors that carry the line
  return [f](RunConfig& c, const std::string& k, const KeyValueConfig::Entry& e) {
    try {
      f(c, k, e);
    } catch (const ParseError&) {
      throw;
    } catch (const InputError& err) {
      throw ParseError(k + ": " + err.what(), e.line);
    }
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto dbl = [&](const char* key, auto member) {
      t[key] = wrap([member](RunConfig& c, const std::string& k, const auto& e) { member(c) = to_double(k, e); });
    };
    auto integer = [&](const char* key, auto member) {
      t[key] = wrap([member](RunConfig& c, const std::string& k, const auto& e) { member(c) = to_int(k, e); });
    };
    auto boolean = [&](const char* key, auto member) {
      t[key] = wrap([member](RunConfig& c, const std::string& k, const auto& e) { member(c) = to_bool(k, e); });
    };

    // data generation
    integer("n", [](RunConfig& c) -> int& { return c.dgp.n; });
    integer("p", [](RunConfig& c) -> int& { return c.dgp.p; });
    integer("d", [](RunConfig& c) -> int& { return c.dgp.d; });
    dbl("edge_prob", [](RunConfig& c) -> double& { return c.dgp.edge_prob; });
    integer("K_true", [](RunConfig& c) -> int& { return c.dgp.K_true; });
    integer("R_true", [](RunConfig& c) -> int& { return c.dgp.R_true; });
    dbl("snr", [](RunConfig& c) -> double& { return c.dgp.snr; });
    dbl("target_radius", [](RunConfig& c) -> double& { return c.dgp.target_radius; });
    integer("pool_size", [](RunConfig& c) -> int& { return c.dgp.pool_size; });
    integer("points_per_curve", [](RunConfig& c) -> int& { return c.dgp.points_per_curve; });
    dbl("cycle_prob", [](RunConfig& c) -> double& { return c.dgp.cycle_prob; });
    integer("max_cycle_length", [](RunConfig& c) -> int& { return c.dgp.max_cycle_length; });
    dbl("laplace_scale", [](RunConfig& c) -> double& { return c.dgp.law.laplace_scale; });
    dbl("student_df", [](RunConfig& c) -> double& { return c.dgp.law.student_df; });
    dbl("uniform_half_width", [](RunConfig& c) -> double& { return c.dgp.law.uniform_half_width; });
    dbl("exponential_rate", [](RunConfig& c) -> double& { return c.dgp.law.exponential_rate; });
    dbl("dexp_center", [](RunConfig& c) -> double& { return c.dgp.law.dexp_center; });
    dbl("dexp_scale", [](RunConfig& c) -> double& { return c.dgp.law.dexp_scale; });
    dbl("mix4_inner", [](RunConfig& c) -> double& { return c.dgp.law.mix4_inner; });
    dbl("mix4_outer", [](RunConfig& c) -> double& { return c.dgp.law.mix4_outer; });
    dbl("mix4_var", [](RunConfig& c) -> double& { return c.dgp.law.mix4_var; });
    dbl("mix2_weight", [](RunConfig& c) -> double& { return c.dgp.law.mix2_weight; });
    dbl("mix2_mean1", [](RunConfig& c) -> double& { return c.dgp.law.mix2_mean1; });
    dbl("mix2_var1", [](RunConfig& c) -> double& { return c.dgp.law.mix2_var1; });
    dbl("mix2_mean2", [](RunConfig& c) -> double& { return c.dgp.law.mix2_mean2; });
    dbl("mix2_var2", [](RunConfig& c) -> double& { return c.dgp.law.mix2_var2; });
    t["exogenous"] = wrap([](RunConfig& c, const std::string&, const auto& e) {
      c.dgp.law.kind = parse_exogenous_kind(e.value);
    });
    t["graph_class"] = wrap([](RunConfig& c, const std::string&, const auto& e) {
      c.dgp.graph_class = parse_graph_class(e.value);
    });
    t["grid"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      if (e.value == "regular") c.dgp.grid = GridDesign::regular;
      else if (e.value == "irregular") c.dgp.grid = GridDesign::irregular;
      else throw ParseError(k + ": expected regular or irregular", e.line);
    });

    // sampler
    integer("iterations", [](RunConfig& c) -> int& { return c.chain.iterations; });
    integer("burn_in", [](RunConfig& c) -> int& { return c.chain.burn_in; });
    integer("thin", [](RunConfig& c) -> int& { return c.chain.thin; });
    integer("M", [](RunConfig& c) -> int& { return c.chain.M; });
    integer("S", [](RunConfig& c) -> int& { return c.chain.S; });
    integer("R", [](RunConfig& c) -> int& { return c.chain.R; });
    t["K"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      c.chain.K = e.value == "auto" ? 0 : to_int(k, e);
    });
    dbl("a_gamma", [](RunConfig& c) -> double& { return c.chain.hyper.a_gamma; });
    dbl("b_gamma", [](RunConfig& c) -> double& { return c.chain.hyper.b_gamma; });
    dbl("s", [](RunConfig& c) -> double& { return c.chain.hyper.spike; });
    dbl("a_mu", [](RunConfig& c) -> double& { return c.chain.hyper.a_mu; });
    dbl("b_mu", [](RunConfig& c) -> double& { return c.chain.hyper.b_mu; });
    dbl("a_tau", [](RunConfig& c) -> double& { return c.chain.hyper.a_tau; });
    dbl("b_tau", [](RunConfig& c) -> double& { return c.chain.hyper.b_tau; });
    dbl("a_sigma", [](RunConfig& c) -> double& { return c.chain.hyper.a_sigma; });
    dbl("b_sigma", [](RunConfig& c) -> double& { return c.chain.hyper.b_sigma; });
    dbl("beta", [](RunConfig& c) -> double& { return c.chain.hyper.dirichlet; });
    dbl("a_r", [](RunConfig& c) -> double& { return c.chain.hyper.a_rho; });
    dbl("b_r", [](RunConfig& c) -> double& { return c.chain.hyper.b_rho; });
    dbl("z", [](RunConfig& c) -> double& { return c.chain.z; });
    dbl("target_acceptance", [](RunConfig& c) -> double& { return c.chain.target_acceptance; });
    integer("adapt_interval", [](RunConfig& c) -> int& { return c.chain.adapt_interval; });
    integer("max_redraws", [](RunConfig& c) -> int& { return c.chain.max_redraws; });
    integer("warm_start_sweeps", [](RunConfig& c) -> int& { return c.chain.warm_start_sweeps; });
    dbl("det_anneal", [](RunConfig& c) -> double& { return c.chain.det_anneal; });
    integer("threads", [](RunConfig& c) -> int& { return c.chain.threads; });
    boolean("refresh_effects", [](RunConfig& c) -> bool& { return c.chain.refresh_effects; });
    boolean("update_basis", [](RunConfig& c) -> bool& { return c.chain.update_basis; });
    t["stability_tol"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      c.chain.stability_tol = c.dgp.stability_tol = to_double(k, e);
    });
    t["mh_mode"] = wrap([](RunConfig& c, const std::string&, const auto& e) { c.chain.mh_mode = parse_mh_mode(e.value); });
    t["instability"] = wrap([](RunConfig& c, const std::string&, const auto& e) {
      c.chain.instability = parse_instability_policy(e.value);
    });
    t["effect_scale"] = wrap([](RunConfig& c, const std::string&, const auto& e) {
      c.chain.effect_scale = parse_effect_scale_mode(e.value);
    });
    t["graph_proposal"] = wrap([](RunConfig& c, const std::string&, const auto& e) {
      c.chain.graph_proposal = parse_graph_proposal(e.value);
    });
    t["init_basis"] = wrap([](RunConfig& c, const std::string&, const auto& e) {
      c.chain.init_basis = parse_basis_init(e.value);
    });

    // general and study
    t["seed"] = wrap([](RunConfig& c, const std::string& k, const auto& e) { c.set_seed(to_seed(k, e)); });
    dbl("threshold", [](RunConfig& c) -> double& { return c.threshold; });
    integer("replicates", [](RunConfig& c) -> int& { return c.study.replicates; });
    t["study_n"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      c.study.n = to_list<int>(k, e, [&](const auto& x) { return to_int(k, x); });
    });
    t["study_p"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      c.study.p = to_list<int>(k, e, [&](const auto& x) { return to_int(k, x); });
    });
    t["study_d"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      c.study.d = to_list<int>(k, e, [&](const auto& x) { return to_int(k, x); });
    });
    t["study_exogenous"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      c.study.laws = to_list<ExogenousKind>(k, e, [](const auto& x) { return parse_exogenous_kind(x.value); });
    });
    t["study_graph_class"] = wrap([](RunConfig& c, const std::string& k, const auto& e) {
      c.study.graph_classes = to_list<GraphClass>(k, e, [](const auto& x) { return parse_graph_class(x.value); });
    });
    return t;
  }();
  return table;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  long line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key = trim(std::string_view(trimmed).substr(0, eq));
    const std::string value = trim(std::string_view(trimmed).substr(eq + 1));
    if (key.empty()) throw ParseError("missing key", line_no);
    if (value.empty()) throw ParseError(key + ": missing value", line_no);
    if (cfg.entries_.count(key)) throw ParseError("duplicate key '" + key + "'", line_no);
    cfg.entries_[key] = Entry{value, line_no};
    if (end == text.size()) break;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  dgp.seed = s;
  chain.seed = s;
  study.seed = s;
}

RunConfig apply_config(const KeyValueConfig& kv, RunConfig base) {
  const auto& table = setters();
  // the seed first, so that nothing else depends on key order
  if (kv.contains("seed")) table.at("seed")(base, "seed", kv.entries().at("seed"));
  for (const auto& [key, entry] : kv.entries()) {
    if (key == "seed") continue;
    const auto it = table.find(key);
    if (it == table.end()) throw ParseError("unknown key '" + key + "'", entry.line);
    it->second(base, key, entry);
  }
  base.study.dgp = base.dgp;
  base.study.chain = base.chain;
  base.study.threshold = base.threshold;
  return base;
}

std::map<std::string, std::string> config_snapshot(const RunConfig& c) {
  std::map<std::string, std::string> m;
  auto num = [](double v) { return format_double(v); };
  auto join = [](const auto& v, auto f) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + f(v[i]);
    return s;
  };
  m["n"] = std::to_string(c.dgp.n);
  m["p"] = std::to_string(c.dgp.p);
  m["d"] = std::to_string(c.dgp.d);
  m["edge_prob"] = num(c.dgp.effective_edge_prob());
  m["K_true"] = std::to_string(c.dgp.K_true);
  m["R_true"] = std::to_string(c.dgp.R_true);
  m["snr"] = std::isinf(c.dgp.snr) ? "inf" : num(c.dgp.snr);
  m["exogenous"] = to_string(c.dgp.law.kind);
  m["graph_class"] = to_string(c.dgp.graph_class);
  m["grid"] = c.dgp.grid == GridDesign::regular ? "regular" : "irregular";
  m["pool_size"] = std::to_string(c.dgp.pool_size);
  m["points_per_curve"] = std::to_string(c.dgp.points_per_curve);
  m["target_radius"] = num(c.dgp.target_radius);
  m["cycle_prob"] = num(c.dgp.cycle_prob);
  m["max_cycle_length"] = std::to_string(c.dgp.max_cycle_length);
  m["laplace_scale"] = num(c.dgp.law.laplace_scale);
  m["student_df"] = num(c.dgp.law.student_df);
  m["uniform_half_width"] = num(c.dgp.law.uniform_half_width);
  m["exponential_rate"] = num(c.dgp.law.exponential_rate);
  m["dexp_center"] = num(c.dgp.law.dexp_center);
  m["dexp_scale"] = num(c.dgp.law.dexp_scale);
  m["mix4_inner"] = num(c.dgp.law.mix4_inner);
  m["mix4_outer"] = num(c.dgp.law.mix4_outer);
  m["mix4_var"] = num(c.dgp.law.mix4_var);
  m["mix2_weight"] = num(c.dgp.law.mix2_weight);
  m["mix2_mean1"] = num(c.dgp.law.mix2_mean1);
  m["mix2_var1"] = num(c.dgp.law.mix2_var1);
  m["mix2_mean2"] = num(c.dgp.law.mix2_mean2);
  m["mix2_var2"] = num(c.dgp.law.mix2_var2);
  m["iterations"] = std::to_string(c.chain.iterations);
  m["burn_in"] = std::to_string(c.chain.burn_in);
  m["thin"] = std::to_string(c.chain.thin);
  m["M"] = std::to_string(c.chain.M);
  m["S"] = std::to_string(c.chain.S);
  m["R"] = std::to_string(c.chain.R);
  m["K"] = c.chain.K == 0 ? "auto" : std::to_string(c.chain.K);
  m["a_gamma"] = num(c.chain.hyper.a_gamma);
  m["b_gamma"] = num(c.chain.hyper.b_gamma);
  m["s"] = num(c.chain.hyper.spike);
  m["a_mu"] = num(c.chain.hyper.a_mu);
  m["b_mu"] = num(c.chain.hyper.b_mu);
  m["a_tau"] = num(c.chain.hyper.a_tau);
  m["b_tau"] = num(c.chain.hyper.b_tau);
  m["a_sigma"] = num(c.chain.hyper.a_sigma);
  m["b_sigma"] = num(c.chain.hyper.b_sigma);
  m["beta"] = num(c.chain.hyper.dirichlet);
  m["a_r"] = num(c.chain.hyper.a_rho);
  m["b_r"] = num(c.chain.hyper.b_rho);
  m["z"] = num(c.chain.z);
  m["target_acceptance"] = num(c.chain.target_acceptance);
  m["adapt_interval"] = std::to_string(c.chain.adapt_interval);
  m["stability_tol"] = num(c.chain.stability_tol);
  m["max_redraws"] = std::to_string(c.chain.max_redraws);
  m["mh_mode"] = to_string(c.chain.mh_mode);
  m["instability"] = to_string(c.chain.instability);
  m["effect_scale"] = to_string(c.chain.effect_scale);
  m["refresh_effects"] = c.chain.refresh_effects ? "true" : "false";
  m["update_basis"] = c.chain.update_basis ? "true" : "false";
  m["graph_proposal"] = to_string(c.chain.graph_proposal);
  m["init_basis"] = to_string(c.chain.init_basis);
  m["warm_start_sweeps"] = std::to_string(c.chain.warm_start_sweeps);
  m["det_anneal"] = num(c.chain.det_anneal);
  m["threads"] = std::to_string(c.chain.threads);
  m["seed"] = std::to_string(c.seed);
  m["threshold"] = num(c.threshold);
  m["replicates"] = std::to_string(c.study.replicates);
  m["study_n"] = join(c.study.n, [](int v) { return std::to_string(v); });
  m["study_p"] = join(c.study.p, [](int v) { return std::to_string(v); });
  m["study_d"] = join(c.study.d, [](int v) { return std::to_string(v); });
  m["study_exogenous"] = join(c.study.laws, [](ExogenousKind v) { return to_string(v); });
  m["study_graph_class"] = join(c.study.graph_classes, [](GraphClass v) { return to_string(v); });
  return m;
}

}  // namespace fence
