#include <gtest/gtest.h>

#include "fixtures.hpp"

namespace {

using namespace prosac;
using fixtures::TempDir;

json analytic_doc() {
  return json::parse(R"({
    "grid": {"axes": [{"name": "eps", "values": [0.01, 0.02, 0.03]}, {"name": "iters", "values": [10, 20]}]},
    "oracle": {"kind": "analytic", "n": 500, "surface": {"type": "constant", "value": 0.02}}
  })");
}

TEST(Config, DefaultsFollowTheExperimentSetup) {
  const RunConfig cfg = parse_config(analytic_doc());
  EXPECT_EQ(cfg.spec.alpha, 0.10);
  EXPECT_EQ(cfg.spec.zeta, 0.05);
  EXPECT_EQ(cfg.spec.delta, 0.01);
  EXPECT_EQ(cfg.ucb.beta, 0.1);
  EXPECT_EQ(cfg.ucb.kernel.smoothness, 2.5);
  EXPECT_EQ(cfg.ucb.smoothness_bound, 1.0);
  EXPECT_EQ(cfg.ucb.scale_c, 1.0);
  EXPECT_EQ(cfg.method, MethodChoice::grid);
  EXPECT_EQ(cfg.output_format, OutputFormat::json);
}

TEST(Config, RoundTripIsStable) {
  json doc = analytic_doc();
  doc["method"] = "both";
  doc["ucb"] = {{"beta", 1.0}, {"rounds", 70}, {"noise_std", 0.01}, {"kernel", {{"smoothness", 1.5}, {"length_scale", {0.3, 0.6}}}},
                {"B", 2.0}, {"scale_c", 0.5}, {"seed_policy", "per_round"}};
  doc["seed"] = 99;
  doc["output"] = {{"path", "out/v.csv"}, {"format", "csv"}};
  const RunConfig a = parse_config(doc);
  const json once = to_json(a);
  const RunConfig b = parse_config(once);
  EXPECT_EQ(to_json(b), once);
  EXPECT_EQ(b.ucb.kernel.length_scale, (std::vector<double>{0.3, 0.6}));
  EXPECT_EQ(b.ucb.seed_policy, SeedPolicy::per_round);
  EXPECT_EQ(*b.ucb.noise_std, 0.01);
  EXPECT_EQ(b.seed, 99u);

  for (const char* sub : {R"({"kind":"table","path":"t.csv","format":"json"})",
                          R"({"kind":"subprocess","command":["runner","--epsilon","0.03"],"timeout_secs":12.5})"}) {
    json d = analytic_doc();
    d["oracle"] = json::parse(sub);
    const json first = to_json(parse_config(d));
    EXPECT_EQ(to_json(parse_config(first)), first);
  }
}

std::string config_error(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, StrictValidation) {
  json doc = analytic_doc();
  doc["colour"] = "blue";
  EXPECT_NE(config_error(doc).find("unknown key 'colour'"), std::string::npos);

  doc = analytic_doc();
  doc["oracle"]["nn"] = 3;
  EXPECT_NE(config_error(doc).find("unknown key 'nn' in oracle"), std::string::npos);

  doc = analytic_doc();
  doc["spec"] = {{"alpha", 0.1}, {"zeta", 0.05}, {"delta", 0.2}};
  EXPECT_FALSE(config_error(doc).empty());

  doc = analytic_doc();
  doc["oracle"]["n"] = "many";
  EXPECT_NE(config_error(doc).find("wrong type"), std::string::npos);

  doc = analytic_doc();
  doc["oracle"]["kind"] = "oracle-of-delphi";
  EXPECT_NE(config_error(doc).find("oracle.kind"), std::string::npos);

  doc = analytic_doc();
  doc["method"] = "bayes";
  EXPECT_FALSE(config_error(doc).empty());

  doc = analytic_doc();
  doc["ucb"] = {{"rounds", 0}};
  EXPECT_FALSE(config_error(doc).empty());

  doc = analytic_doc();
  doc["jobs"] = 0;
  EXPECT_FALSE(config_error(doc).empty());

  doc = analytic_doc();
  doc.erase("oracle");
  EXPECT_NE(config_error(doc).find("oracle"), std::string::npos);
}

TEST(Config, SurfaceShapes) {
  const HyperGrid g({{"a", {0, 1, 2}}, {"b", {0, 1}}});
  const auto constant = surface_risks({{"type", "constant"}, {"value", 0.3}}, g);
  EXPECT_EQ(constant, std::vector<double>(6, 0.3));
  const auto values = surface_risks({{"type", "values"}, {"values", {0, 0.1, 0.2, 0.3, 0.4, 0.5}}}, g);
  EXPECT_EQ(values[5], 0.5);
  EXPECT_THROW(surface_risks({{"type", "values"}, {"values", {0.1}}}, g), ConfigError);
  const auto bump = surface_risks({{"type", "bump"}, {"base", 0.01}, {"peak", 0.2}, {"center", {1.0, 1.0}}, {"width", 0.3}}, g);
  EXPECT_DOUBLE_EQ(bump[5], 0.2);
  EXPECT_LT(bump[0], 0.02);
  const auto cone = surface_risks({{"type", "cone"}, {"peak", 0.12}, {"slope", 0.1}, {"apex", {0.0, 0.0}}, {"floor", 0.0}}, g);
  EXPECT_DOUBLE_EQ(cone[0], 0.12);
  EXPECT_NEAR(cone[1], 0.02, 1e-15);
  EXPECT_EQ(cone[5], 0.0);
  EXPECT_THROW(surface_risks({{"type", "constant"}, {"value", 1.2}}, g), ConfigError);
  EXPECT_THROW(surface_risks({{"type", "spiral"}}, g), ConfigError);
}

TEST(Config, TableGridMustMatchDeclaredAxes) {
  TempDir dir;
  const std::string path = fixtures::write_table(dir, "t.csv", RiskTable{HyperGrid({{"eps", {1, 2}}}), {{0.1}, {0.2}}, 10});
  json doc = analytic_doc();
  doc["oracle"] = {{"kind", "table"}, {"path", path}};
  EXPECT_THROW(build_oracle(parse_config(doc)), ConfigError);
  doc["grid"]["axes"] = json::array({{{"name", "eps"}, {"values", {1, 2}}}});
  EXPECT_EQ(build_oracle(parse_config(doc)).grid.size(), 2u);
  doc.erase("grid");
  EXPECT_EQ(build_oracle(parse_config(doc)).grid.size(), 2u);
}

TEST(Config, ResolvedSeedsAndNoise) {
  TempDir dir;
  const std::string path = fixtures::write_table(dir, "cone.csv", fixtures::cone_table(1));
  json doc = {{"oracle", {{"kind", "table"}, {"path", path}}}, {"seed", 3}};
  RunConfig cfg = parse_config(doc);
  BuiltOracle built = build_oracle(cfg);
  ResolvedRun run = resolve_run(cfg, built);
  EXPECT_EQ(run.grid_seed, kAverageSeed);
  EXPECT_TRUE(run.evaluation.vary_seed_per_round);
  EXPECT_EQ(run.ucb.noise_std, 0.0);
  const double spread = table_p_value_spread(*built.table, 0.1);
  EXPECT_GT(spread, 0.0);
  EXPECT_NEAR(*run.ucb.model_noise_variance, spread * spread, 1e-18);

  doc["ucb"] = {{"seed_policy", "fixed"}, {"model_noise_std", 0.02}};
  cfg = parse_config(doc);
  run = resolve_run(cfg, built);
  EXPECT_FALSE(run.evaluation.vary_seed_per_round);
  EXPECT_NEAR(*run.ucb.model_noise_variance, 4e-4, 1e-18);

  cfg = parse_config(analytic_doc());
  built = build_oracle(cfg);
  run = resolve_run(cfg, built);
  EXPECT_NE(run.grid_seed, kAverageSeed);
  EXPECT_EQ(run.grid_seed, run.evaluation.seed);
  EXPECT_FALSE(run.evaluation.vary_seed_per_round);
  EXPECT_EQ(*run.ucb.model_noise_variance, 0.0);
}

TEST(Config, SubprocessOracleFromConfig) {
  TempDir dir;
  const RiskTable t{HyperGrid({{"eps", {1, 2}}}), {{0.07}, {0.0}}, 1000};
  const std::string path = fixtures::write_table(dir, "t.csv", t);
  json doc = {{"grid", {{"axes", {{{"name", "eps"}, {"values", {1, 2}}}}}}},
              {"oracle", {{"kind", "subprocess"}, {"command", {fixtures::kMockRunner, path}}, {"timeout_secs", 5}}}};
  BuiltOracle built = build_oracle(parse_config(doc));
  const RiskEstimate r = built.oracle->evaluate(Point{1}, 0);
  EXPECT_EQ(r.risk_hat, 0.07);
  EXPECT_EQ(r.n, 1000);
}

}  // namespace
