#pragma once

// Run configuration: one strictly validated JSON document describing a
// certification (spec, grid, oracle source, method, GP-UCB settings, output).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosac/certifier.hpp"
#include "prosac/gp_ucb.hpp"
#include "prosac/grid.hpp"
#include "prosac/oracle.hpp"
#include "prosac/seed.hpp"
#include "prosac/subprocess_oracle.hpp"

namespace prosac {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MethodChoice { grid, gp_ucb, both };
enum class OutputFormat { json, csv };
enum class SeedPolicy { automatic, fixed, per_round };

struct OracleSource {
  OracleKind kind = OracleKind::analytic;
  // analytic
  std::int64_t n = 500;
  Coupling coupling = Coupling::shared;
  json surface = json{{"type", "constant"}, {"value", 0.0}};
  // table
  std::string path;
  TableFormat table_format = TableFormat::csv;
  // subprocess
  std::vector<std::string> command;
  std::optional<double> timeout_secs;

  json metadata = json::object();
  bool cache = true;
};

struct UcbSettings {
  double beta = 0.1;
  std::size_t rounds = 50;
  std::optional<double> noise_std;  // injected noise; unset = 0
  std::optional<double> model_noise_std;  // GP noise; unset = oracle-dependent default
  KernelConfig kernel{};
  double smoothness_bound = 1.0;
  double scale_c = 1.0;
  SeedPolicy seed_policy = SeedPolicy::automatic;
};

struct SimulateSettings {
  std::size_t trials = 2000;
  MethodChoice method = MethodChoice::grid;
};

struct RunConfig {
  SafetySpec spec{};
  std::vector<GridAxis> axes;  // empty: take the grid from the table
  OracleSource oracle{};
  MethodChoice method = MethodChoice::grid;
  UcbSettings ucb{};
  SimulateSettings simulate{};
  Seed seed = 0;
  std::size_t jobs = 1;
  std::string output_path = "verdict.json";
  OutputFormat output_format = OutputFormat::json;
};

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type: " + obj.at(key).dump());
  }
}

inline MethodChoice parse_method(const std::string& s) {
  if (s == "grid") return MethodChoice::grid;
  if (s == "gp_ucb") return MethodChoice::gp_ucb;
  if (s == "both") return MethodChoice::both;
  throw ConfigError("method must be one of grid, gp_ucb, both; got '" + s + "'");
}

inline std::string method_name(MethodChoice m) {
  switch (m) {
    case MethodChoice::grid: return "grid";
    case MethodChoice::gp_ucb: return "gp_ucb";
    case MethodChoice::both: return "both";
  }
  return "grid";
}

inline OutputFormat parse_format(const std::string& s) {
  if (s == "json") return OutputFormat::json;
  if (s == "csv") return OutputFormat::csv;
  throw ConfigError("format must be json or csv; got '" + s + "'");
}

inline std::string format_name(OutputFormat f) { return f == OutputFormat::json ? "json" : "csv"; }

inline SeedPolicy parse_seed_policy(const std::string& s) {
  if (s == "auto") return SeedPolicy::automatic;
  if (s == "fixed") return SeedPolicy::fixed;
  if (s == "per_round") return SeedPolicy::per_round;
  throw ConfigError("ucb.seed_policy must be auto, fixed or per_round; got '" + s + "'");
}

inline std::string seed_policy_name(SeedPolicy p) {
  switch (p) {
    case SeedPolicy::automatic: return "auto";
    case SeedPolicy::fixed: return "fixed";
    case SeedPolicy::per_round: return "per_round";
  }
  return "auto";
}

}  // namespace detail

inline RunConfig parse_config(const json& doc) {
  using detail::get_or;
  detail::check_keys(doc, {"spec", "grid", "oracle", "method", "ucb", "simulate", "seed", "jobs", "output"},
                     "config");
  RunConfig cfg;

  if (doc.contains("spec")) {
    const json& s = doc["spec"];
    detail::check_keys(s, {"alpha", "zeta", "delta"}, "spec");
    cfg.spec.alpha = get_or(s, "alpha", cfg.spec.alpha, "spec");
    cfg.spec.zeta = get_or(s, "zeta", cfg.spec.zeta, "spec");
    cfg.spec.delta = get_or(s, "delta", cfg.spec.delta, "spec");
  }
  try {
    cfg.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (doc.contains("grid")) {
    const json& g = doc["grid"];
    detail::check_keys(g, {"axes"}, "grid");
    if (!g.contains("axes") || !g["axes"].is_array()) throw ConfigError("grid.axes must be an array");
    for (const auto& a : g["axes"]) {
      detail::check_keys(a, {"name", "values"}, "grid.axes[]");
      GridAxis axis{get_or<std::string>(a, "name", "", "grid.axes[]"),
                    get_or<std::vector<double>>(a, "values", {}, "grid.axes[]")};
      if (axis.name.empty()) throw ConfigError("grid axis without a name");
      if (axis.values.empty()) throw ConfigError("grid axis '" + axis.name + "' has no values");
      cfg.axes.push_back(std::move(axis));
    }
  }

  if (!doc.contains("oracle")) throw ConfigError("config lacks an 'oracle' section");
  {
    const json& o = doc["oracle"];
    detail::check_keys(o, {"kind", "n", "coupling", "surface", "path", "format", "command", "timeout_secs",
                           "metadata", "cache"},
                       "oracle");
    const auto kind = get_or<std::string>(o, "kind", "", "oracle");
    auto& src = cfg.oracle;
    src.metadata = get_or<json>(o, "metadata", json::object(), "oracle");
    if (!src.metadata.is_object()) throw ConfigError("oracle.metadata must be an object");
    src.cache = get_or(o, "cache", true, "oracle");
    if (kind == "analytic") {
      src.kind = OracleKind::analytic;
      src.n = get_or<std::int64_t>(o, "n", 500, "oracle");
      if (src.n < 1) throw ConfigError("oracle.n must be >= 1");
      const auto coupling = get_or<std::string>(o, "coupling", "shared", "oracle");
      if (coupling == "shared") src.coupling = Coupling::shared;
      else if (coupling == "independent") src.coupling = Coupling::independent;
      else throw ConfigError("oracle.coupling must be shared or independent");
      if (!o.contains("surface")) throw ConfigError("analytic oracle needs a 'surface'");
      src.surface = o["surface"];
    } else if (kind == "table") {
      src.kind = OracleKind::table;
      src.path = get_or<std::string>(o, "path", "", "oracle");
      if (src.path.empty()) throw ConfigError("table oracle needs a 'path'");
      const auto fmt = get_or<std::string>(o, "format", "csv", "oracle");
      if (fmt == "csv") src.table_format = TableFormat::csv;
      else if (fmt == "json") src.table_format = TableFormat::json;
      else throw ConfigError("oracle.format must be csv or json");
    } else if (kind == "subprocess") {
      src.kind = OracleKind::subprocess;
      src.command = get_or<std::vector<std::string>>(o, "command", {}, "oracle");
      if (src.command.empty()) throw ConfigError("subprocess oracle needs a non-empty 'command'");
      if (o.contains("timeout_secs") && !o["timeout_secs"].is_null()) {
        src.timeout_secs = get_or<double>(o, "timeout_secs", 300.0, "oracle");
        if (!(*src.timeout_secs > 0.0)) throw ConfigError("oracle.timeout_secs must be positive");
      }
    } else {
      throw ConfigError("oracle.kind must be analytic, table or subprocess; got '" + kind + "'");
    }
  }

  cfg.method = detail::parse_method(get_or<std::string>(doc, "method", "grid", "config"));

  if (doc.contains("ucb")) {
    const json& u = doc["ucb"];
    detail::check_keys(u, {"beta", "rounds", "noise_std", "model_noise_std", "kernel", "B", "scale_c",
                           "seed_policy"},
                       "ucb");
    cfg.ucb.beta = get_or(u, "beta", cfg.ucb.beta, "ucb");
    const auto rounds = get_or<std::int64_t>(u, "rounds", 50, "ucb");
    if (rounds < 1) throw ConfigError("ucb.rounds must be >= 1");
    cfg.ucb.rounds = static_cast<std::size_t>(rounds);
    if (u.contains("noise_std") && !u["noise_std"].is_null()) {
      cfg.ucb.noise_std = get_or<double>(u, "noise_std", 0.0, "ucb");
    }
    if (u.contains("model_noise_std") && !u["model_noise_std"].is_null()) {
      cfg.ucb.model_noise_std = get_or<double>(u, "model_noise_std", 0.0, "ucb");
    }
    if (u.contains("kernel")) {
      const json& k = u["kernel"];
      detail::check_keys(k, {"family", "smoothness", "length_scale", "signal_variance"}, "ucb.kernel");
      if (get_or<std::string>(k, "family", "matern", "ucb.kernel") != "matern") {
        throw ConfigError("ucb.kernel.family must be matern");
      }
      cfg.ucb.kernel.smoothness = get_or(k, "smoothness", 2.5, "ucb.kernel");
      if (k.contains("length_scale")) {
        const json& ls = k["length_scale"];
        cfg.ucb.kernel.length_scale =
            ls.is_number() ? std::vector<double>{ls.get<double>()}
                           : get_or<std::vector<double>>(k, "length_scale", {1.0}, "ucb.kernel");
      }
      cfg.ucb.kernel.signal_variance = get_or(k, "signal_variance", 1.0, "ucb.kernel");
    }
    cfg.ucb.smoothness_bound = get_or(u, "B", 1.0, "ucb");
    cfg.ucb.scale_c = get_or(u, "scale_c", 1.0, "ucb");
    cfg.ucb.seed_policy = detail::parse_seed_policy(get_or<std::string>(u, "seed_policy", "auto", "ucb"));
    try {
      cfg.ucb.kernel.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!(cfg.ucb.beta >= 0.0)) throw ConfigError("ucb.beta must be >= 0");
    if (cfg.ucb.noise_std && !(*cfg.ucb.noise_std >= 0.0)) throw ConfigError("ucb.noise_std must be >= 0");
    if (cfg.ucb.model_noise_std && !(*cfg.ucb.model_noise_std >= 0.0)) {
      throw ConfigError("ucb.model_noise_std must be >= 0");
    }
    if (!(cfg.ucb.smoothness_bound >= 0.0)) throw ConfigError("ucb.B must be >= 0");
    if (!(cfg.ucb.scale_c > 0.0)) throw ConfigError("ucb.scale_c must be positive");
  }

  if (doc.contains("simulate")) {
    const json& s = doc["simulate"];
    detail::check_keys(s, {"trials", "method"}, "simulate");
    const auto trials = get_or<std::int64_t>(s, "trials", 2000, "simulate");
    if (trials < 1) throw ConfigError("simulate.trials must be >= 1");
    cfg.simulate.trials = static_cast<std::size_t>(trials);
    cfg.simulate.method = detail::parse_method(get_or<std::string>(s, "method", "grid", "simulate"));
  }

  cfg.seed = get_or<Seed>(doc, "seed", 0, "config");
  const auto jobs = get_or<std::int64_t>(doc, "jobs", 1, "config");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  cfg.jobs = static_cast<std::size_t>(jobs);

  if (doc.contains("output")) {
    const json& out = doc["output"];
    detail::check_keys(out, {"path", "format"}, "output");
    cfg.output_path = get_or<std::string>(out, "path", cfg.output_path, "output");
    cfg.output_format = detail::parse_format(get_or<std::string>(out, "format", "json", "output"));
  }
  return cfg;
}

inline json to_json(const RunConfig& cfg) {
  json axes = json::array();
  for (const auto& a : cfg.axes) axes.push_back({{"name", a.name}, {"values", a.values}});

  json oracle = {{"kind", std::string(to_string(cfg.oracle.kind))},
                 {"metadata", cfg.oracle.metadata},
                 {"cache", cfg.oracle.cache}};
  switch (cfg.oracle.kind) {
    case OracleKind::analytic:
      oracle["n"] = cfg.oracle.n;
      oracle["coupling"] = std::string(to_string(cfg.oracle.coupling));
      oracle["surface"] = cfg.oracle.surface;
      break;
    case OracleKind::table:
      oracle["path"] = cfg.oracle.path;
      oracle["format"] = cfg.oracle.table_format == TableFormat::csv ? "csv" : "json";
      break;
    case OracleKind::subprocess:
      oracle["command"] = cfg.oracle.command;
      oracle["timeout_secs"] = cfg.oracle.timeout_secs ? json(*cfg.oracle.timeout_secs) : json(nullptr);
      break;
  }

  json ucb = {{"beta", cfg.ucb.beta},
              {"rounds", cfg.ucb.rounds},
              {"noise_std", cfg.ucb.noise_std ? json(*cfg.ucb.noise_std) : json(nullptr)},
              {"model_noise_std", cfg.ucb.model_noise_std ? json(*cfg.ucb.model_noise_std) : json(nullptr)},
              {"kernel",
               {{"family", "matern"},
                {"smoothness", cfg.ucb.kernel.smoothness},
                {"length_scale", cfg.ucb.kernel.length_scale},
                {"signal_variance", cfg.ucb.kernel.signal_variance}}},
              {"B", cfg.ucb.smoothness_bound},
              {"scale_c", cfg.ucb.scale_c},
              {"seed_policy", detail::seed_policy_name(cfg.ucb.seed_policy)}};

  json doc = {{"spec", {{"alpha", cfg.spec.alpha}, {"zeta", cfg.spec.zeta}, {"delta", cfg.spec.delta}}},
              {"oracle", oracle},
              {"method", detail::method_name(cfg.method)},
              {"ucb", ucb},
              {"simulate", {{"trials", cfg.simulate.trials}, {"method", detail::method_name(cfg.simulate.method)}}},
              {"seed", cfg.seed},
              {"jobs", cfg.jobs},
              {"output", {{"path", cfg.output_path}, {"format", detail::format_name(cfg.output_format)}}}};
  if (!cfg.axes.empty()) doc["grid"] = {{"axes", axes}};
  return doc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

/// True risk per grid point for an analytic surface description:
///   {"type":"constant","value":r}
///   {"type":"values","values":[r_0, ..., r_{|grid|-1}]}
///   {"type":"bump","base":b,"peak":p,"center":[...],"width":w}     Gaussian bump
///   {"type":"cone","peak":p,"slope":s,"apex":[...],"floor":f}      p - s * distance
/// Coordinates for bump/cone are per-axis min-max normalized to [0,1].
inline std::vector<double> surface_risks(const json& surface, const HyperGrid& grid) {
  using detail::get_or;
  const auto type = get_or<std::string>(surface, "type", "", "oracle.surface");
  std::vector<double> risk(grid.size());
  auto normalized_distance = [&](std::size_t i, const std::vector<double>& centre) {
    const Point x = grid.normalized_point(i);
    if (centre.size() != x.size()) {
      throw ConfigError("oracle.surface centre has " + std::to_string(centre.size()) + " coordinates for a " +
                        std::to_string(x.size()) + "-dimensional grid");
    }
    double sq = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) sq += (x[d] - centre[d]) * (x[d] - centre[d]);
    return std::sqrt(sq);
  };
  if (type == "constant") {
    detail::check_keys(surface, {"type", "value"}, "oracle.surface");
    std::fill(risk.begin(), risk.end(), get_or(surface, "value", 0.0, "oracle.surface"));
  } else if (type == "values") {
    detail::check_keys(surface, {"type", "values"}, "oracle.surface");
    risk = get_or<std::vector<double>>(surface, "values", {}, "oracle.surface");
    if (risk.size() != grid.size()) {
      throw ConfigError("oracle.surface.values has " + std::to_string(risk.size()) + " entries for " +
                        std::to_string(grid.size()) + " grid points");
    }
  } else if (type == "bump") {
    detail::check_keys(surface, {"type", "base", "peak", "center", "width"}, "oracle.surface");
    const double base = get_or(surface, "base", 0.0, "oracle.surface");
    const double peak = get_or(surface, "peak", 0.0, "oracle.surface");
    const double width = get_or(surface, "width", 0.25, "oracle.surface");
    const auto centre = get_or<std::vector<double>>(surface, "center", {}, "oracle.surface");
    if (!(width > 0.0)) throw ConfigError("oracle.surface.width must be positive");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double r = normalized_distance(i, centre);
      risk[i] = base + (peak - base) * std::exp(-r * r / (2.0 * width * width));
    }
  } else if (type == "cone") {
    detail::check_keys(surface, {"type", "peak", "slope", "apex", "floor"}, "oracle.surface");
    const double peak = get_or(surface, "peak", 0.0, "oracle.surface");
    const double slope = get_or(surface, "slope", 0.0, "oracle.surface");
    const double floor = get_or(surface, "floor", 0.0, "oracle.surface");
    const auto apex = get_or<std::vector<double>>(surface, "apex", {}, "oracle.surface");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      risk[i] = std::max(floor, peak - slope * normalized_distance(i, apex));
    }
  } else {
    throw ConfigError("oracle.surface.type must be constant, values, bump or cone; got '" + type + "'");
  }
  for (double r : risk) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("oracle.surface produces a risk outside [0,1]");
  }
  return risk;
}

/// Oracle built from a config, with the grid it is evaluated on.
struct BuiltOracle {
  std::shared_ptr<RiskOracle> oracle;
  HyperGrid grid;
  std::vector<double> true_risk;  // analytic only
  std::optional<RiskTable> table;  // table only
};

inline HyperGrid config_grid(const RunConfig& cfg) {
  if (cfg.axes.empty()) throw ConfigError("config lacks grid.axes");
  return HyperGrid(cfg.axes);
}

inline BuiltOracle build_oracle(const RunConfig& cfg) {
  BuiltOracle built;
  const auto& src = cfg.oracle;
  switch (src.kind) {
    case OracleKind::analytic: {
      built.grid = config_grid(cfg);
      built.true_risk = surface_risks(src.surface, built.grid);
      built.oracle = std::make_shared<AnalyticOracle>(built.grid, built.true_risk, src.n, src.coupling, src.metadata);
      break;
    }
    case OracleKind::table: {
      RiskTable table = load_table(src.path, src.table_format);
      if (!cfg.axes.empty()) {
        const HyperGrid declared(cfg.axes);
        if (declared.size() != table.grid.size()) {
          throw ConfigError("grid.axes span " + std::to_string(declared.size()) + " points but table '" + src.path +
                            "' has " + std::to_string(table.grid.size()));
        }
        for (std::size_t i = 0; i < declared.size(); ++i) {
          if (declared.point(i) != table.grid.point(i)) {
            throw ConfigError("grid.axes do not match the grid of table '" + src.path + "'");
          }
        }
      }
      built.grid = table.grid;
      built.table = table;
      built.oracle = std::make_shared<TableOracle>(std::move(table), src.metadata);
      break;
    }
    case OracleKind::subprocess: {
      built.grid = config_grid(cfg);
      const auto fallback = src.timeout_secs
                                ? std::chrono::milliseconds(static_cast<long long>(*src.timeout_secs * 1000.0))
                                : kDefaultRunnerTimeout;
      built.oracle = std::make_shared<SubprocessOracle>(src.command, runner_timeout_from_env(fallback));
      break;
    }
  }
  if (src.cache) built.oracle = std::make_shared<CachedOracle>(built.oracle);
  return built;
}

/// Seeds and GP noise resolved for one run. Tables: the grid path reads run
/// averages and each GP-UCB round draws a fresh run; other oracles evaluate
/// one fixed calibration/attack seed on both paths.
struct ResolvedRun {
  Seed grid_seed = 0;
  UcbEvaluation evaluation;
  UcbConfig ucb;
  ThresholdParams threshold;
};

/// Pooled standard deviation of single-run p-values across table runs.
inline double table_p_value_spread(const RiskTable& table, double alpha) {
  if (table.run_count() < 2) return 0.0;
  double pooled = 0.0;
  for (std::size_t i = 0; i < table.grid.size(); ++i) {
    std::vector<double> ps;
    double mean = 0.0;
    for (double r : table.runs[i]) {
      ps.push_back(hb_p_value(r, table.n, alpha).value);
      mean += ps.back();
    }
    mean /= static_cast<double>(ps.size());
    double var = 0.0;
    for (double p : ps) var += (p - mean) * (p - mean);
    pooled += var / static_cast<double>(ps.size() - 1);
  }
  return std::sqrt(pooled / static_cast<double>(table.grid.size()));
}

inline ResolvedRun resolve_run(const RunConfig& cfg, const BuiltOracle& built) {
  ResolvedRun r;
  const bool multi_run_table = built.table && built.table->run_count() > 1;
  const Seed base = derive_seed(cfg.seed, "oracle");
  r.grid_seed = cfg.oracle.kind == OracleKind::table ? kAverageSeed : base;
  r.evaluation.seed = base;
  switch (cfg.ucb.seed_policy) {
    case SeedPolicy::automatic: r.evaluation.vary_seed_per_round = multi_run_table; break;
    case SeedPolicy::fixed: r.evaluation.vary_seed_per_round = false; break;
    case SeedPolicy::per_round: r.evaluation.vary_seed_per_round = true; break;
  }

  r.ucb.beta = cfg.ucb.beta;
  r.ucb.rounds = cfg.ucb.rounds;
  r.ucb.kernel = cfg.ucb.kernel;
  r.ucb.seed = derive_seed(cfg.seed, "ucb-noise");
  r.ucb.noise_std = cfg.ucb.noise_std.value_or(0.0);
  double model_std = r.ucb.noise_std;
  if (cfg.ucb.model_noise_std) {
    model_std = *cfg.ucb.model_noise_std;
  } else if (multi_run_table && r.evaluation.vary_seed_per_round) {
    const double spread = table_p_value_spread(*built.table, cfg.spec.alpha);
    model_std = std::sqrt(model_std * model_std + spread * spread);
  }
  r.ucb.model_noise_variance = model_std * model_std;
  r.threshold.smoothness_bound = cfg.ucb.smoothness_bound;
  r.threshold.scale_c = cfg.ucb.scale_c;
  return r;
}

}  // namespace prosac
