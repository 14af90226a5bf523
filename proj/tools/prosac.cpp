#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prosac/commands.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<prosac::Seed> seed;
  std::optional<std::int64_t> jobs;
  std::optional<std::string> output;
  std::optional<std::string> format;
  std::optional<std::string> method;
  std::optional<std::int64_t> trials;
  std::optional<std::int64_t> rounds;
  std::optional<double> alpha;
  std::optional<double> zeta;
  std::optional<double> delta;
  std::vector<std::string> sets;  // pointer=value
};

// Flag values parse as JSON when they can, otherwise they are taken as strings.
prosac::json flag_value(const std::string& text) {
  try {
    return prosac::json::parse(text);
  } catch (const prosac::json::parse_error&) {
    return prosac::json(text);
  }
}

prosac::RunConfig resolve_config(const Overrides& o) {
  std::ifstream in(o.config_path);
  if (!in) throw prosac::ConfigError("cannot open config file '" + o.config_path + "'");
  prosac::json doc;
  try {
    in >> doc;
  } catch (const prosac::json::parse_error& e) {
    throw prosac::ConfigError("config file '" + o.config_path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw prosac::ConfigError("config file '" + o.config_path + "' must hold a JSON object");

  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw prosac::ConfigError("--set expects POINTER=VALUE, got '" + s + "'");
    try {
      doc[prosac::json::json_pointer(s.substr(0, eq))] = flag_value(s.substr(eq + 1));
    } catch (const prosac::json::exception& e) {
      throw prosac::ConfigError("--set '" + s + "': " + e.what());
    }
  }
  if (o.seed) doc["seed"] = *o.seed;
  if (o.jobs) doc["jobs"] = *o.jobs;
  if (o.output) doc["output"]["path"] = *o.output;
  if (o.format) doc["output"]["format"] = *o.format;
  if (o.method) doc["method"] = *o.method;
  if (o.trials) doc["simulate"]["trials"] = *o.trials;
  if (o.rounds) doc["ucb"]["rounds"] = *o.rounds;
  if (o.alpha) doc["spec"]["alpha"] = *o.alpha;
  if (o.zeta) doc["spec"]["zeta"] = *o.zeta;
  if (o.delta) doc["spec"]["delta"] = *o.delta;
  return prosac::parse_config(doc);
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run configuration")->required();
  cmd->add_option("--seed", o.seed, "top-level seed");
  cmd->add_option("-j,--jobs", o.jobs, "worker threads");
  cmd->add_option("-o,--output", o.output, "output file");
  cmd->add_option("--format", o.format, "output format")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--alpha", o.alpha, "risk threshold");
  cmd->add_option("--zeta", o.zeta, "Type-I level");
  cmd->add_option("--delta", o.delta, "GP-UCB confidence slack");
  cmd->add_option("--rounds", o.rounds, "GP-UCB rounds");
  cmd->add_option("--set", o.sets, "override a config field: /json/pointer=value");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certify a model's adversarial risk with a family-wise Type-I guarantee"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "prosac 0.1.0");

  Overrides o;
  std::string sweep;
  std::vector<std::string> values;

  auto* certify = app.add_subcommand("certify", "certify the configured oracle over its grid");
  add_common(certify, o);
  certify->add_option("--method", o.method, "grid, gp_ucb or both")->check(CLI::IsMember({"grid", "gp_ucb", "both"}));

  auto* scan = app.add_subcommand("scan", "certify once per value of a swept config field");
  add_common(scan, o);
  scan->add_option("--method", o.method, "grid, gp_ucb or both")->check(CLI::IsMember({"grid", "gp_ucb", "both"}));
  scan->add_option("--sweep", sweep, "JSON pointer of the swept field, e.g. /oracle/surface/value")->required();
  scan->add_option("--values", values, "sweep values")->delimiter(',');

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo false-certification rate on an analytic surface");
  add_common(simulate, o);
  simulate->add_option("--method", o.method, "grid, gp_ucb or both")->check(CLI::IsMember({"grid", "gp_ucb", "both"}));
  simulate->add_option("--trials", o.trials, "number of trials");

  auto* compare = app.add_subcommand("compare", "grid p-values next to the GP-UCB trajectory");
  add_common(compare, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : prosac::kExitError;
  }

  // --method means the simulated method for simulate, the certified one elsewhere.
  std::optional<std::string> sim_method;
  if (simulate->parsed()) std::swap(sim_method, o.method);
  if (simulate->parsed() && o.trials && *o.trials < 1) {
    std::cerr << "error: --trials must be at least 1\n";
    return prosac::kExitError;
  }

  prosac::RunConfig cfg;
  try {
    if (sim_method) o.sets.push_back("/simulate/method=\"" + *sim_method + "\"");
    cfg = resolve_config(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return prosac::kExitError;
  }

  if (certify->parsed()) return prosac::cmd_certify(cfg, std::cerr);
  if (scan->parsed()) {
    std::vector<prosac::json> sweep_values;
    for (const auto& v : values) sweep_values.push_back(flag_value(v));
    return prosac::cmd_scan(cfg, sweep, std::move(sweep_values), std::cerr);
  }
  if (simulate->parsed()) return prosac::cmd_simulate(cfg, std::cerr);
  return prosac::cmd_compare(cfg, std::cerr);
}
