#pragma once

// (alpha, zeta)-safety decisions: the max-p-value grid test, the GP-UCB test
// against the conservative threshold, and Monte Carlo Type-I validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "prosac/gp_ucb.hpp"
#include "prosac/grid.hpp"
#include "prosac/hb_stats.hpp"
#include "prosac/oracle.hpp"
#include "prosac/seed.hpp"

namespace prosac {

struct SafetySpec {
  double alpha = 0.10;  // risk threshold
  double zeta = 0.05;   // Type-I level
  double delta = 0.01;  // GP-UCB confidence slack

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("spec: alpha must lie in (0,1)");
    if (!(zeta > 0.0 && zeta < 1.0)) throw std::invalid_argument("spec: zeta must lie in (0,1)");
    if (!(delta > 0.0 && delta < zeta)) throw std::invalid_argument("spec: delta must lie in (0, zeta)");
  }
};

enum class Decision { certified_safe, not_certified, indeterminate };
enum class Method { grid, gp_ucb };

inline std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::certified_safe: return "certified_safe";
    case Decision::not_certified: return "not_certified";
    case Decision::indeterminate: return "indeterminate";
  }
  return "unknown";
}

inline std::string_view to_string(Method m) { return m == Method::grid ? "grid" : "gp_ucb"; }

struct GridEntry {
  std::size_t index = 0;
  Point lambda;
  double risk_hat = 0.0;
  double p_value = 1.0;
  double log_p_value = 0.0;
};

struct ThresholdParams {
  double smoothness_bound = 1.0;  // B
  double scale_c = 1.0;           // constant hidden in the O(.) term
  // Noise variance for the information gain; defaults to
  // max(GP noise variance, kInfoGainNoiseFloor).
  std::optional<double> info_gain_noise_variance;
};

// gamma_T diverges as the noise variance goes to zero.
inline constexpr double kInfoGainNoiseFloor = 1e-6;

struct UcbEvidence {
  UcbResult run;
  double gamma_T = 0.0;
  double info_gain_noise_variance = 0.0;
  double zeta_prime = 0.0;
  ThresholdParams threshold_params;
  std::optional<std::size_t> min_rounds_for_positive_threshold;
};

struct Verdict {
  Decision decision = Decision::not_certified;
  double p_star = 1.0;
  double threshold = 0.0;
  Method method = Method::grid;
  SafetySpec spec;
  std::vector<GridEntry> grid_evidence;  // method == grid
  std::optional<UcbEvidence> ucb;        // method == gp_ucb
  std::string oracle_fingerprint;
  json oracle_metadata = json::object();
};

class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(Point lambda, const std::string& what)
      : std::runtime_error("oracle failed at lambda " + format_point(lambda) + ": " + what),
        lambda_(std::move(lambda)) {}
  [[nodiscard]] const Point& lambda() const noexcept { return lambda_; }

 private:
  Point lambda_;
};

namespace detail {

inline std::string describe(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
}

/// Runs body(i) for i in [0, count) on up to `jobs` threads, striding indices.
/// The first exception (lowest index) is rethrown after all workers join.
inline void parallel_for(std::size_t count, std::size_t jobs,
                         const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t i = w; i < count; i += jobs) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Evaluates every grid point and rejects "some lambda has risk > alpha" iff
/// the largest p-value is <= zeta.
inline Verdict grid_certify(RiskOracle& oracle, const HyperGrid& grid, const SafetySpec& spec,
                            Seed seed = kAverageSeed, std::size_t jobs = 1) {
  spec.validate();
  if (grid.empty()) throw std::invalid_argument("grid_certify: empty grid");
  Verdict v;
  v.method = Method::grid;
  v.spec = spec;
  v.threshold = spec.zeta;
  v.oracle_fingerprint = fingerprint(oracle);
  v.oracle_metadata = oracle.descriptor().attack_metadata;
  v.grid_evidence.resize(grid.size());

  const std::size_t workers = oracle.descriptor().concurrency_safe ? jobs : 1;
  detail::parallel_for(grid.size(), workers, [&](std::size_t i) {
    Point lambda = grid.point(i);
    RiskEstimate risk;
    try {
      risk = oracle.evaluate(lambda, seed);
    } catch (...) {
      std::throw_with_nested(EvaluationError(lambda, detail::describe(std::current_exception())));
    }
    const PValue p = hb_p_value(risk, spec.alpha);
    v.grid_evidence[i] = {i, std::move(lambda), risk.risk_hat, p.value, p.log_value};
  });

  v.p_star = 0.0;
  for (const auto& e : v.grid_evidence) v.p_star = std::max(v.p_star, e.p_value);
  v.decision = v.p_star <= v.threshold ? Decision::certified_safe : Decision::not_certified;
  return v;
}

struct UcbEvaluation {
  Seed seed = kAverageSeed;
  // Draw a fresh attack seed each round (multi-run tables) instead of reusing
  // `seed` (fixed calibration draw).
  bool vary_seed_per_round = false;

  [[nodiscard]] Seed seed_for_round(std::size_t round) const {
    return vary_seed_per_round ? derive_seed(seed, "ucb-eval", round) : seed;
  }
};

/// GP-UCB over the p-value surface; certifies iff the averaged estimate is at
/// most zeta'. A non-positive zeta' yields `indeterminate`, never a certificate.
inline Verdict ucb_certify(RiskOracle& oracle, const HyperGrid& grid, const SafetySpec& spec,
                           const UcbConfig& cfg, const ThresholdParams& params = {},
                           const UcbEvaluation& evaluation = {}) {
  spec.validate();
  cfg.validate();
  if (grid.empty()) throw std::invalid_argument("ucb_certify: empty grid");

  UcbEvidence ev;
  ev.threshold_params = params;
  ev.run = ucb_run(
      [&](std::size_t index, std::size_t round) {
        const Point lambda = grid.point(index);
        RiskEstimate risk;
        try {
          risk = oracle.evaluate(lambda, evaluation.seed_for_round(round));
        } catch (...) {
          std::throw_with_nested(EvaluationError(lambda, detail::describe(std::current_exception())));
        }
        return hb_p_value(risk, spec.alpha).value;
      },
      grid, cfg);

  ev.info_gain_noise_variance = params.info_gain_noise_variance.value_or(
      std::max(cfg.gp_noise_variance(), kInfoGainNoiseFloor));
  const std::vector<double> curve =
      info_gain_curve(cfg.kernel, grid, ev.info_gain_noise_variance, grid.size());
  ev.gamma_T = curve[std::min(cfg.rounds, grid.size()) - 1];
  ev.zeta_prime = conservative_threshold(spec.zeta, spec.delta, params.smoothness_bound, ev.gamma_T,
                                         cfg.rounds, params.scale_c);
  if (ev.zeta_prime <= 0.0) {
    ev.min_rounds_for_positive_threshold = minimum_rounds_for_positive_threshold(
        spec.zeta, spec.delta, params.smoothness_bound, params.scale_c, curve);
  }

  Verdict v;
  v.method = Method::gp_ucb;
  v.spec = spec;
  v.p_star = ev.run.p_hat;
  v.threshold = ev.zeta_prime;
  if (ev.zeta_prime <= 0.0) {
    v.decision = Decision::indeterminate;
  } else {
    v.decision = v.p_star <= v.threshold ? Decision::certified_safe : Decision::not_certified;
  }
  v.oracle_fingerprint = fingerprint(oracle);
  v.oracle_metadata = oracle.descriptor().attack_metadata;
  v.ucb = std::move(ev);
  return v;
}

struct Comparison {
  Verdict grid;
  Verdict ucb;
  std::vector<double> running_mean;  // mean of p-hat_1..p-hat_t after each round t
};

/// Grid search and GP-UCB on one oracle. The grid path uses `grid_seed`
/// (run-averaged risks for tables); the UCB path observes per `evaluation`.
inline Comparison compare_methods(RiskOracle& oracle, const HyperGrid& grid, const SafetySpec& spec,
                                  const UcbConfig& cfg, const ThresholdParams& params,
                                  Seed grid_seed, const UcbEvaluation& evaluation,
                                  std::size_t jobs = 1) {
  Comparison out{grid_certify(oracle, grid, spec, grid_seed, jobs),
                 ucb_certify(oracle, grid, spec, cfg, params, evaluation), {}};
  double sum = 0.0;
  const auto& traj = out.ucb.ucb->run.trajectory;
  out.running_mean.reserve(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    sum += traj[t].observed;
    out.running_mean.push_back(sum / static_cast<double>(t + 1));
  }
  return out;
}

struct Type1Options {
  Method method = Method::grid;
  Coupling coupling = Coupling::shared;
  std::size_t trials = 2000;
  Seed seed = 0;
  std::size_t jobs = 1;
  UcbConfig ucb{};
  ThresholdParams threshold{};
};

struct Type1Report {
  std::size_t trials = 0;
  std::size_t false_certifications = 0;
  std::size_t indeterminate = 0;
  double rejection_rate = 0.0;
  double standard_error = 0.0;
  double true_max_risk = 0.0;

  [[nodiscard]] bool within(double zeta, double sigmas = 3.0) const {
    return rejection_rate <= zeta + sigmas * standard_error;
  }
};

class NullNotTrue : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Monte Carlo estimate of P(certified_safe) on a surface whose true max risk
/// exceeds alpha, i.e. the false-certification rate. Trial i draws its
/// calibration set from derive_seed(seed, "trial", i), independent of
/// scheduling, so results do not depend on `jobs`.
inline Type1Report simulate_type1(const HyperGrid& grid, const std::vector<double>& true_risk,
                                  const SafetySpec& spec, std::int64_t n, const Type1Options& opt) {
  spec.validate();
  if (opt.trials < 1) throw std::invalid_argument("simulate_type1: trials must be >= 1");
  if (true_risk.empty()) throw std::invalid_argument("simulate_type1: empty surface");
  const double max_risk = *std::max_element(true_risk.begin(), true_risk.end());
  if (!(max_risk > spec.alpha)) {
    throw NullNotTrue("simulate_type1: surface max risk " + std::to_string(max_risk) +
                      " does not exceed alpha " + std::to_string(spec.alpha) +
                      "; the null hypothesis is false, so no Type-I error can be measured");
  }
  AnalyticOracle oracle(grid, true_risk, n, opt.coupling);
  std::vector<std::uint8_t> outcome(opt.trials, 0);
  detail::parallel_for(opt.trials, opt.jobs, [&](std::size_t i) {
    const Seed trial_seed = derive_seed(opt.seed, "trial", i);
    Verdict v;
    if (opt.method == Method::grid) {
      v = grid_certify(oracle, grid, spec, trial_seed);
    } else {
      UcbConfig cfg = opt.ucb;
      cfg.seed = derive_seed(trial_seed, "ucb-noise");
      v = ucb_certify(oracle, grid, spec, cfg, opt.threshold, {trial_seed, false});
    }
    outcome[i] = v.decision == Decision::certified_safe ? 1 : v.decision == Decision::indeterminate ? 2 : 0;
  });

  Type1Report r;
  r.trials = opt.trials;
  r.true_max_risk = max_risk;
  for (auto o : outcome) {
    if (o == 1) ++r.false_certifications;
    if (o == 2) ++r.indeterminate;
  }
  r.rejection_rate = static_cast<double>(r.false_certifications) / static_cast<double>(r.trials);
  r.standard_error = std::sqrt(r.rejection_rate * (1.0 - r.rejection_rate) / static_cast<double>(r.trials));
  return r;
}

}  // namespace prosac
