#pragma once

// The certify / scan / simulate / compare commands behind the prosac tool.
// Each returns the process exit code: 0 certified_safe, 1 not_certified,
// 2 indeterminate, 3 error (for scan/compare, 0 on success; for simulate,
// 0 when the Type-I bound holds and 1 when it does not).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosac/certifier.hpp"
#include "prosac/config.hpp"
#include "prosac/report.hpp"

namespace prosac {

inline constexpr int kExitError = 3;

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write output file '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing output file '" + path + "'");
}

inline std::string output_stem(const std::string& path) {
  std::filesystem::path p(path);
  p.replace_extension();
  return p.string();
}

inline std::vector<Verdict> run_methods(const RunConfig& cfg, BuiltOracle& built, MethodChoice method) {
  const ResolvedRun run = resolve_run(cfg, built);
  std::vector<Verdict> verdicts;
  if (method == MethodChoice::grid || method == MethodChoice::both) {
    verdicts.push_back(grid_certify(*built.oracle, built.grid, cfg.spec, run.grid_seed, cfg.jobs));
  }
  if (method == MethodChoice::gp_ucb || method == MethodChoice::both) {
    verdicts.push_back(ucb_certify(*built.oracle, built.grid, cfg.spec, run.ucb, run.threshold, run.evaluation));
  }
  return verdicts;
}

inline std::string describe_nested(const std::exception& e) {
  std::string msg = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    const std::string more = describe_nested(inner);
    if (msg.find(more) == std::string::npos) msg += ": " + more;
  } catch (...) {
  }
  return msg;
}

}  // namespace detail

inline int cmd_certify(const RunConfig& cfg, std::ostream& log) {
  try {
    BuiltOracle built = build_oracle(cfg);
    const std::vector<Verdict> verdicts = detail::run_methods(cfg, built, cfg.method);
    const Decision overall = combine(verdicts);
    const int code = exit_code(overall);
    if (cfg.output_format == OutputFormat::json) {
      json doc = {{"tool", "prosac"},
                  {"command", "certify"},
                  {"decision", std::string(to_string(overall))},
                  {"exit_code", code},
                  {"verdicts", json::array()},
                  {"config", to_json(cfg)}};
      for (const auto& v : verdicts) doc["verdicts"].push_back(to_json(v));
      detail::write_text(cfg.output_path, doc.dump(2) + "\n");
    } else {
      std::ostringstream out;
      write_verdict_summary_csv(verdicts, out);
      detail::write_text(cfg.output_path, out.str());
    }
    for (const auto& v : verdicts) {
      log << to_string(v.method) << ": " << to_string(v.decision) << " (p=" << format_double(v.p_star)
          << ", threshold=" << format_double(v.threshold) << ")\n";
    }
    return code;
  } catch (const std::exception& e) {
    log << "error: " << detail::describe_nested(e) << '\n';
    return kExitError;
  }
}

/// One certification per sweep value. `pointer` is a JSON pointer into the
/// config document (e.g. /oracle/surface/value or /oracle/command/3) that
/// receives each value. Rows are sorted by sweep value; a failing point is
/// recorded in its row and the scan continues.
inline int cmd_scan(const RunConfig& cfg, const std::string& pointer, std::vector<json> values,
                    std::ostream& log) {
  if (values.empty()) {
    log << "error: scan needs at least one sweep value\n";
    return kExitError;
  }
  json::json_pointer ptr;
  try {
    ptr = json::json_pointer(pointer);
  } catch (const json::exception& e) {
    log << "error: invalid sweep pointer '" << pointer << "': " << e.what() << '\n';
    return kExitError;
  }
  std::stable_sort(values.begin(), values.end(), [](const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return a.get<double>() < b.get<double>();
    return a.dump() < b.dump();
  });

  std::ostringstream out;
  out << "sweep_value,method,p_star,threshold,decision,error\n";
  const json base = to_json(cfg);
  for (const json& value : values) {
    const std::string label = value.is_string() ? value.get<std::string>()
                              : value.is_number() ? format_double(value.get<double>())
                                                  : value.dump();
    try {
      json doc = base;
      doc[ptr] = value;
      const RunConfig point_cfg = parse_config(doc);
      BuiltOracle built = build_oracle(point_cfg);
      for (const auto& v : detail::run_methods(point_cfg, built, point_cfg.method)) {
        out << label << ',' << to_string(v.method) << ',' << format_double(v.p_star) << ','
            << format_double(v.threshold) << ',' << to_string(v.decision) << ",\n";
      }
    } catch (const std::exception& e) {
      std::string msg = detail::describe_nested(e);
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << label << ",,,,error," << msg << '\n';
      log << "scan point " << label << " failed: " << msg << '\n';
    }
  }
  try {
    detail::write_text(cfg.output_path, out.str());
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}

inline json to_json(const Type1Report& r, double zeta, Method method) {
  return {{"method", std::string(to_string(method))},
          {"trials", r.trials},
          {"false_certifications", r.false_certifications},
          {"indeterminate", r.indeterminate},
          {"rejection_rate", r.rejection_rate},
          {"standard_error", r.standard_error},
          {"bound", zeta + 3.0 * r.standard_error},
          {"pass", r.within(zeta)},
          {"true_max_risk", r.true_max_risk}};
}

inline int cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  try {
    if (cfg.oracle.kind != OracleKind::analytic) {
      throw ConfigError("simulate needs an analytic oracle (known true risk surface)");
    }
    const HyperGrid grid = config_grid(cfg);
    const std::vector<double> risk = surface_risks(cfg.oracle.surface, grid);

    BuiltOracle probe{nullptr, grid, risk, std::nullopt};
    const ResolvedRun run = resolve_run(cfg, probe);

    std::vector<Method> methods;
    if (cfg.simulate.method != MethodChoice::gp_ucb) methods.push_back(Method::grid);
    if (cfg.simulate.method != MethodChoice::grid) methods.push_back(Method::gp_ucb);

    json reports = json::array();
    bool all_pass = true;
    for (Method m : methods) {
      Type1Options opt;
      opt.method = m;
      opt.coupling = cfg.oracle.coupling;
      opt.trials = cfg.simulate.trials;
      opt.seed = derive_seed(cfg.seed, "simulate");
      opt.jobs = cfg.jobs;
      opt.ucb = run.ucb;
      opt.threshold = run.threshold;
      const Type1Report r = simulate_type1(grid, risk, cfg.spec, cfg.oracle.n, opt);
      reports.push_back(to_json(r, cfg.spec.zeta, m));
      all_pass = all_pass && r.within(cfg.spec.zeta);
      log << to_string(m) << ": false-certification rate " << format_double(r.rejection_rate) << " +/- "
          << format_double(r.standard_error) << " over " << r.trials << " trials ("
          << (r.within(cfg.spec.zeta) ? "within" : "exceeds") << " zeta + 3 stderr)\n";
    }
    json doc = {{"tool", "prosac"}, {"command", "simulate"}, {"pass", all_pass},
                {"reports", reports}, {"config", to_json(cfg)}};
    detail::write_text(cfg.output_path, doc.dump(2) + "\n");
    return all_pass ? 0 : 1;
  } catch (const NullNotTrue& e) {
    log << "refused: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    log << "error: " << detail::describe_nested(e) << '\n';
    return kExitError;
  }
}

/// Writes <stem>_grid.csv, <stem>_trace.csv and <stem>_summary.json where
/// <stem> is the output path without extension.
inline int cmd_compare(const RunConfig& cfg, std::ostream& log) {
  try {
    BuiltOracle built = build_oracle(cfg);
    const ResolvedRun run = resolve_run(cfg, built);
    const Comparison c = compare_methods(*built.oracle, built.grid, cfg.spec, run.ucb, run.threshold,
                                         run.grid_seed, run.evaluation, cfg.jobs);
    const std::string stem = detail::output_stem(cfg.output_path);
    std::ostringstream grid_csv;
    std::ostringstream trace_csv;
    write_grid_csv(c.grid, built.grid, grid_csv);
    write_trace_csv(c, built.grid, trace_csv);
    detail::write_text(stem + "_grid.csv", grid_csv.str());
    detail::write_text(stem + "_trace.csv", trace_csv.str());

    const auto& u = *c.ucb.ucb;
    json summary = {{"tool", "prosac"},
                    {"command", "compare"},
                    {"grid_p_star", c.grid.p_star},
                    {"grid_decision", std::string(to_string(c.grid.decision))},
                    {"ucb_p_hat_T", u.run.p_hat},
                    {"ucb_max_observed", u.run.max_observed},
                    {"ucb_argmax_observed", u.run.argmax_observed},
                    {"ucb_zeta_prime", u.zeta_prime},
                    {"ucb_decision", std::string(to_string(c.ucb.decision))},
                    {"rounds", u.run.trajectory.size()},
                    {"oracle_fingerprint", c.grid.oracle_fingerprint},
                    {"config", to_json(cfg)}};
    detail::write_text(stem + "_summary.json", summary.dump(2) + "\n");
    log << "grid p* = " << format_double(c.grid.p_star) << ", GP-UCB p_hat_T = " << format_double(u.run.p_hat)
        << " (max observed " << format_double(u.run.max_observed) << ")\n";
    return 0;
  } catch (const std::exception& e) {
    log << "error: " << detail::describe_nested(e) << '\n';
    return kExitError;
  }
}

}  // namespace prosac
