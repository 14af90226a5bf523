#pragma once

// Hoeffding-Bentkus p-values for the null "adversarial risk exceeds alpha".

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prosac {

struct SampleOutcome {
  bool correct = false;  // clean model prediction matches the label
  bool fooled = false;   // attacked prediction differs from the label
};

/// Empirical adversarial risk at one attacker configuration.
struct RiskEstimate {
  double risk_hat = 0.0;
  std::int64_t n = 1;
  std::vector<double> lambda;
  std::optional<std::vector<SampleOutcome>> per_sample;
};

struct PValue {
  double value = 1.0;
  double log_value = 0.0;  // exact log of the unclamped p-value
  double alpha = 0.0;
  double hoeffding = 1.0;  // exp(-n h1), or 1 on the R >= alpha branch
  double bentkus = 1.0;    // e * P(Bin(n, alpha) <= ceil(n R)), may exceed 1
  RiskEstimate source_risk;
};

// Smallest value hb_p_value reports; keeps p strictly positive.
inline constexpr double kPValueFloor = std::numeric_limits<double>::min();

namespace detail {

// Stirling series remainder: log(n!) - log(sqrt(2 pi n) (n/e)^n).
inline double stirling_error(double n) {
  static constexpr std::array<double, 16> kSmall = {
      0.0,
      0.08106146679532725822,
      0.041340695955409294094,
      0.027677925684998339149,
      0.020790672103765093112,
      0.016644691189821192163,
      0.013876128823070747999,
      0.011896709945891770095,
      0.010411265261972096497,
      0.0092554621827127329177,
      0.0083305634333628712565,
      0.007573675487951840795,
      0.0069428401072095298657,
      0.0064089941880042070684,
      0.0059513701127588477356,
      0.005554733551962801371,
  };
  constexpr double s0 = 1.0 / 12.0;
  constexpr double s1 = 1.0 / 360.0;
  constexpr double s2 = 1.0 / 1260.0;
  constexpr double s3 = 1.0 / 1680.0;
  constexpr double s4 = 1.0 / 1188.0;
  if (n <= 15.0) return kSmall[static_cast<std::size_t>(n)];
  const double nn = n * n;
  if (n > 500.0) return (s0 - s1 / nn) / n;
  if (n > 80.0) return (s0 - (s1 - s2 / nn) / nn) / n;
  if (n > 35.0) return (s0 - (s1 - (s2 - s3 / nn) / nn) / nn) / n;
  return (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / n;
}

// Deviance term x log(x/m) + m - x, evaluated without cancellation near x = m.
inline double deviance(double x, double m) {
  if (std::abs(x - m) < 0.1 * (x + m)) {
    double v = (x - m) / (x + m);
    double s = (x - m) * v;
    double ej = 2.0 * x * v;
    v *= v;
    for (int j = 1; j < 1000; ++j) {
      ej *= v;
      const double next = s + ej / (2 * j + 1);
      if (next == s) return next;
      s = next;
    }
    return s;
  }
  return x * std::log(x / m) + m - x;
}

// log P(Bin(n, p) = k) by the saddle-point expansion; relative accuracy near
// machine precision for every n, which lgamma differences do not give.
inline double log_binom_pmf(std::int64_t k, std::int64_t n, double p) {
  const double q = 1.0 - p;
  if (k == 0) return static_cast<double>(n) * std::log1p(-p);
  if (k == n) return static_cast<double>(n) * std::log(p);
  const double x = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  const double lc = stirling_error(nd) - stirling_error(x) -
                    stirling_error(nd - x) - deviance(x, nd * p) -
                    deviance(nd - x, nd * q);
  const double lf = std::log(2.0 * std::numbers::pi) + std::log(x) +
                    std::log1p(-x / nd);
  return lc - 0.5 * lf;
}

struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

inline void require_probability(double value, const char* what) {
  if (!(value > 0.0 && value < 1.0)) {
    throw std::domain_error(std::string(what) + " must lie in (0,1), got " +
                            std::to_string(value));
  }
}

}  // namespace detail

/// Bernoulli KL divergence a log(a/b) + (1-a) log((1-a)/(1-b)).
inline double h1(double a, double b) {
  detail::require_probability(b, "h1: b");
  if (!(a >= 0.0 && a < 1.0)) {
    throw std::domain_error("h1: a must lie in [0,1), got " + std::to_string(a));
  }
  // log((1-a)/(1-b)) = log1p((b-a)/(1-b))
  const double tail = (1.0 - a) * std::log1p((b - a) / (1.0 - b));
  if (a == 0.0) return tail;
  return a * std::log(a / b) + tail;
}

/// log P(Bin(n, alpha) <= k).
inline double log_binom_tail(std::int64_t k, std::int64_t n, double alpha) {
  if (n < 1) throw std::domain_error("binom_tail: n must be positive");
  if (k < 0 || k > n) {
    throw std::domain_error("binom_tail: k=" + std::to_string(k) +
                            " outside [0, " + std::to_string(n) + "]");
  }
  detail::require_probability(alpha, "binom_tail: alpha");
  if (k == n) return 0.0;

  const double q = 1.0 - alpha;
  const double nd = static_cast<double>(n);
  const auto mode = static_cast<std::int64_t>(std::floor((nd + 1.0) * alpha));

  if (k < mode) {
    // Terms decrease walking down from k; sum relative to pmf(k).
    detail::KahanSum acc;
    acc.add(1.0);
    double term = 1.0;
    for (std::int64_t j = k; j >= 1; --j) {
      term *= static_cast<double>(j) * q / (static_cast<double>(n - j + 1) * alpha);
      acc.add(term);
      if (term < acc.sum * 1e-18) break;
    }
    return detail::log_binom_pmf(k, n, alpha) + std::log(acc.sum);
  }

  // Upper tail from k+1 up is at most about one half; take log1p(-upper).
  detail::KahanSum acc;
  acc.add(1.0);
  double term = 1.0;
  for (std::int64_t j = k + 1; j < n; ++j) {
    term *= static_cast<double>(n - j) * alpha / (static_cast<double>(j + 1) * q);
    acc.add(term);
    if (term < acc.sum * 1e-18) break;
  }
  const double upper =
      std::exp(detail::log_binom_pmf(k + 1, n, alpha) + std::log(acc.sum));
  return std::log1p(-upper);
}

/// P(Bin(n, alpha) <= k).
inline double binom_tail(std::int64_t k, std::int64_t n, double alpha) {
  return std::exp(log_binom_tail(k, n, alpha));
}

/// ceil(n * risk), snapping products that are integral up to rounding noise
/// (0.07 * 1000 is 70.00000000000001 in binary floating point).
inline std::int64_t lattice_ceil(double risk, std::int64_t n) {
  const double x = static_cast<double>(n) * risk;
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x))) {
    return static_cast<std::int64_t>(nearest);
  }
  return static_cast<std::int64_t>(std::ceil(x));
}

/// min{ exp(-n h1(R, alpha)), e P(Bin(n, alpha) <= ceil(n R)), 1 }, with the
/// Hoeffding term fixed at 1 when R >= alpha. Evaluated in log space so that
/// log_value stays exact when the p-value itself underflows.
inline PValue hb_p_value(const RiskEstimate& risk, double alpha) {
  detail::require_probability(alpha, "hb_p_value: alpha");
  if (risk.n < 1) throw std::domain_error("hb_p_value: n must be positive");
  if (!(risk.risk_hat >= 0.0 && risk.risk_hat <= 1.0)) {
    throw std::domain_error("hb_p_value: risk_hat must lie in [0,1], got " +
                            std::to_string(risk.risk_hat));
  }
  const double nd = static_cast<double>(risk.n);

  const double log_hoeffding =
      risk.risk_hat < alpha ? -nd * h1(risk.risk_hat, alpha) : 0.0;
  const std::int64_t k = std::min(lattice_ceil(risk.risk_hat, risk.n), risk.n);
  const double log_bentkus = 1.0 + log_binom_tail(k, risk.n, alpha);

  PValue out;
  out.alpha = alpha;
  out.log_value = std::min({log_hoeffding, log_bentkus, 0.0});
  out.value = std::max(std::exp(out.log_value), kPValueFloor);
  out.hoeffding = std::exp(log_hoeffding);
  out.bentkus = std::exp(log_bentkus);
  out.source_risk = risk;
  return out;
}

inline PValue hb_p_value(double risk_hat, std::int64_t n, double alpha) {
  return hb_p_value(RiskEstimate{risk_hat, n, {}, std::nullopt}, alpha);
}

/// R = (1/n) sum_i fooled_i * correct_i; only samples the clean model gets
/// right can count as attack successes.
inline RiskEstimate empirical_risk(std::span<const std::uint8_t> correct,
                                   std::span<const std::uint8_t> fooled,
                                   std::vector<double> lambda = {}) {
  if (correct.size() != fooled.size()) {
    throw std::invalid_argument("empirical_risk: length mismatch (" +
                                std::to_string(correct.size()) + " vs " +
                                std::to_string(fooled.size()) + ")");
  }
  if (correct.empty()) throw std::invalid_argument("empirical_risk: empty calibration set");
  std::vector<SampleOutcome> samples;
  samples.reserve(correct.size());
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    const bool c = correct[i] != 0;
    const bool f = fooled[i] != 0;
    hits += (c && f) ? 1 : 0;
    samples.push_back({c, f});
  }
  const auto n = static_cast<std::int64_t>(correct.size());
  return RiskEstimate{static_cast<double>(hits) / static_cast<double>(n), n,
                      std::move(lambda), std::move(samples)};
}

/// True when risk_hat sits on {0, 1/n, ..., 1} within 1e-12.
inline bool on_risk_lattice(double risk_hat, std::int64_t n) {
  const double scaled = risk_hat * static_cast<double>(n);
  return std::abs(scaled - std::round(scaled)) <= 1e-12 * static_cast<double>(n);
}

}  // namespace prosac
