#pragma once

// Serialization of verdicts, comparisons and scans. All numbers go through
// locale-independent formatting so outputs are byte-stable.

#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosac/certifier.hpp"
#include "prosac/grid.hpp"
#include "prosac/oracle.hpp"

namespace prosac {

inline json point_json(const Point& p) { return json(p); }

inline json to_json(const Verdict& v) {
  json out = {{"decision", std::string(to_string(v.decision))},
              {"p_star", v.p_star},
              {"threshold", v.threshold},
              {"method", std::string(to_string(v.method))},
              {"spec", {{"alpha", v.spec.alpha}, {"zeta", v.spec.zeta}, {"delta", v.spec.delta}}},
              {"oracle_fingerprint", v.oracle_fingerprint},
              {"oracle_metadata", v.oracle_metadata}};
  if (v.method == Method::grid) {
    json evidence = json::array();
    for (const auto& e : v.grid_evidence) {
      evidence.push_back({{"index", e.index},
                          {"lambda", point_json(e.lambda)},
                          {"risk_hat", e.risk_hat},
                          {"p_value", e.p_value},
                          {"log_p_value", e.log_p_value}});
    }
    out["evidence"] = std::move(evidence);
  } else if (v.ucb) {
    const auto& u = *v.ucb;
    json trajectory = json::array();
    for (std::size_t t = 0; t < u.run.trajectory.size(); ++t) {
      const auto& r = u.run.trajectory[t];
      trajectory.push_back({{"round", t + 1},
                            {"index", r.index},
                            {"lambda", point_json(r.lambda)},
                            {"observed", r.observed},
                            {"prior_mean", r.prior_mean},
                            {"prior_std", r.prior_std}});
    }
    out["evidence"] = {
        {"p_hat_T", u.run.p_hat},
        {"max_observed", u.run.max_observed},
        {"argmax_observed", point_json(u.run.argmax_observed)},
        {"gamma_T", u.gamma_T},
        {"info_gain_noise_variance", u.info_gain_noise_variance},
        {"zeta_prime", u.zeta_prime},
        {"B", u.threshold_params.smoothness_bound},
        {"scale_c", u.threshold_params.scale_c},
        {"min_rounds_for_positive_threshold",
         u.min_rounds_for_positive_threshold ? json(*u.min_rounds_for_positive_threshold) : json(nullptr)},
        {"trajectory", std::move(trajectory)}};
  }
  return out;
}

/// Combined decision when several methods ran: any refusal to certify wins,
/// not_certified before indeterminate.
inline Decision combine(const std::vector<Verdict>& verdicts) {
  bool indeterminate = false;
  for (const auto& v : verdicts) {
    if (v.decision == Decision::not_certified) return Decision::not_certified;
    if (v.decision == Decision::indeterminate) indeterminate = true;
  }
  return indeterminate ? Decision::indeterminate : Decision::certified_safe;
}

inline int exit_code(Decision d) {
  switch (d) {
    case Decision::certified_safe: return 0;
    case Decision::not_certified: return 1;
    case Decision::indeterminate: return 2;
  }
  return 3;
}

inline void write_csv_header(std::ostream& out, const HyperGrid& grid, std::initializer_list<const char*> lead,
                             std::initializer_list<const char*> tail) {
  bool first = true;
  auto cell = [&](const std::string& s) {
    if (!first) out << ',';
    out << s;
    first = false;
  };
  for (const char* c : lead) cell(c);
  for (const auto& a : grid.axes()) cell(a.name);
  for (const char* c : tail) cell(c);
  out << '\n';
}

inline void write_grid_csv(const Verdict& v, const HyperGrid& grid, std::ostream& out) {
  write_csv_header(out, grid, {"index"}, {"risk_hat", "p_value", "is_max"});
  for (const auto& e : v.grid_evidence) {
    out << e.index;
    for (double c : e.lambda) out << ',' << format_double(c);
    out << ',' << format_double(e.risk_hat) << ',' << format_double(e.p_value) << ','
        << (e.p_value == v.p_star ? 1 : 0) << '\n';
  }
}

inline void write_trace_csv(const Comparison& c, const HyperGrid& grid, std::ostream& out) {
  write_csv_header(out, grid, {"round", "index"},
                   {"observed", "running_mean", "prior_mean", "prior_std", "grid_p_star"});
  const auto& traj = c.ucb.ucb->run.trajectory;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    out << (t + 1) << ',' << traj[t].index;
    for (double x : traj[t].lambda) out << ',' << format_double(x);
    out << ',' << format_double(traj[t].observed) << ',' << format_double(c.running_mean[t]) << ','
        << format_double(traj[t].prior_mean) << ',' << format_double(traj[t].prior_std) << ','
        << format_double(c.grid.p_star) << '\n';
  }
}

inline void write_verdict_summary_csv(const std::vector<Verdict>& verdicts, std::ostream& out) {
  out << "method,decision,p_star,threshold,oracle_fingerprint\n";
  for (const auto& v : verdicts) {
    out << to_string(v.method) << ',' << to_string(v.decision) << ',' << format_double(v.p_star) << ','
        << format_double(v.threshold) << ',' << v.oracle_fingerprint << '\n';
  }
}

}  // namespace prosac
